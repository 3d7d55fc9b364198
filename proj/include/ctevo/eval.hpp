// Trajectory evaluation: timestamp association, SIM(3) alignment, absolute
// trajectory error and relative translation error over a fixed time delta.

#pragma once

#include "ctevo/io.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace ctevo {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x -> s R x + t
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Pose operator*(const Pose& pose) const;
};

/// Least-squares similarity mapping `estimate` onto `reference`. Throws
/// EvaluationError for fewer than 3 pairs or (near) collinear points.
Sim3 align_sim3(std::span<const Vec3> estimate, std::span<const Vec3> reference);

/// Root-mean-square of |reference_i - (s R estimate_i + t)|.
double alignment_rmse(const Sim3& sim, std::span<const Vec3> estimate,
                      std::span<const Vec3> reference);

/// Pose of a time-sorted trajectory at t: translation lerp and rotation
/// slerp between the bracketing samples. Nullopt outside the time range.
std::optional<Pose> pose_at(std::span<const StampedPose> trajectory, double t);

/// Pairs every estimate sample with the nearest reference sample within
/// max_dt; returns (estimate index, reference index).
std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const StampedPose> estimate,
                                                           std::span<const StampedPose> reference,
                                                           double max_dt = 0.01);

std::vector<StampedPose> transformed(const Sim3& sim, std::span<const StampedPose> trajectory);

/// Relative-pose translation error over pairs (t, t + delta) with t taken from
/// the estimate samples; both trajectories are interpolated at those times.
/// Throws EvaluationError when no such pair exists.
double rms_rte(std::span<const StampedPose> estimate, std::span<const StampedPose> reference,
               double delta);

struct Evaluation {
  Sim3 alignment;
  std::size_t pairs = 0;
  double ate = 0.0;
  double rms_rte = 0.0;
};

/// Associates, aligns in SIM(3) and scores an estimate against ground truth.
Evaluation evaluate(std::span<const StampedPose> estimate, std::span<const StampedPose> reference,
                    double delta = 0.5, double max_dt = 0.01);

std::vector<StampedPose> stamped(std::span<const MotionState> states);

}  // namespace ctevo

#include "ctevo/eval.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace ctevo {

Pose Sim3::operator*(const Pose& pose) const {
  return Pose(rotation * pose.rotation(), *this * pose.translation());
}

namespace {

Eigen::Matrix3Xd stack(std::span<const Vec3> points) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = points[i];
  return m;
}

}  // namespace

Sim3 align_sim3(std::span<const Vec3> estimate, std::span<const Vec3> reference) {
  if (estimate.size() != reference.size()) throw EvaluationError("align_sim3: size mismatch");
  if (estimate.size() < 3) throw EvaluationError("align_sim3: need at least 3 pairs");
  const Eigen::Matrix3Xd src = stack(estimate);
  const Eigen::Matrix3Xd dst = stack(reference);
  // collinear (or coincident) estimate points leave the rotation undetermined
  const Eigen::Matrix3Xd centred = src.colwise() - src.rowwise().mean();
  const Vec3 sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centred).singularValues();
  if (!(sv(1) > 1e-9 * std::max(1.0, sv(0)))) {
    throw EvaluationError("align_sim3: degenerate (collinear) correspondences");
  }
  const Mat4 t = Eigen::umeyama(src, dst, true);
  Sim3 sim;
  sim.scale = t.block<3, 1>(0, 0).norm();
  sim.rotation = t.topLeftCorner<3, 3>() / sim.scale;
  sim.translation = t.topRightCorner<3, 1>();
  return sim;
}

double alignment_rmse(const Sim3& sim, std::span<const Vec3> estimate,
                      std::span<const Vec3> reference) {
  if (estimate.empty() || estimate.size() != reference.size()) {
    throw EvaluationError("alignment_rmse: bad correspondence set");
  }
  double sq = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    sq += (reference[i] - sim * estimate[i]).squaredNorm();
  }
  return std::sqrt(sq / static_cast<double>(estimate.size()));
}

std::optional<Pose> pose_at(std::span<const StampedPose> trajectory, double t) {
  if (trajectory.empty() || t < trajectory.front().t || t > trajectory.back().t) {
    return std::nullopt;
  }
  const auto it = std::lower_bound(trajectory.begin(), trajectory.end(), t,
                                   [](const StampedPose& p, double v) { return p.t < v; });
  if (it->t == t) return it->pose;
  const StampedPose& b = *it;
  const StampedPose& a = *std::prev(it);
  return interpolate_pose(a.pose, b.pose, (t - a.t) / (b.t - a.t));
}

std::vector<std::pair<std::size_t, std::size_t>> associate(std::span<const StampedPose> estimate,
                                                           std::span<const StampedPose> reference,
                                                           double max_dt) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (reference.empty()) return pairs;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    const double t = estimate[i].t;
    const auto it = std::lower_bound(reference.begin(), reference.end(), t,
                                     [](const StampedPose& p, double v) { return p.t < v; });
    std::size_t best = reference.size();
    double best_dt = max_dt;
    if (it != reference.end() && std::abs(it->t - t) <= best_dt) {
      best = static_cast<std::size_t>(it - reference.begin());
      best_dt = std::abs(it->t - t);
    }
    if (it != reference.begin() && std::abs(std::prev(it)->t - t) < best_dt) {
      best = static_cast<std::size_t>(std::prev(it) - reference.begin());
    }
    if (best < reference.size()) pairs.emplace_back(i, best);
  }
  return pairs;
}

std::vector<StampedPose> transformed(const Sim3& sim, std::span<const StampedPose> trajectory) {
  std::vector<StampedPose> out;
  out.reserve(trajectory.size());
  for (const auto& p : trajectory) out.push_back({p.t, sim * p.pose});
  return out;
}

double rms_rte(std::span<const StampedPose> estimate, std::span<const StampedPose> reference,
               double delta) {
  if (!(delta > 0.0)) throw EvaluationError("rms_rte: delta must be positive");
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : estimate) {
    const auto e0 = pose_at(estimate, s.t);
    const auto e1 = pose_at(estimate, s.t + delta);
    const auto g0 = pose_at(reference, s.t);
    const auto g1 = pose_at(reference, s.t + delta);
    if (!e0 || !e1 || !g0 || !g1) continue;
    const Pose de = e0->inverse() * *e1;
    const Pose dg = g0->inverse() * *g1;
    sq += (dg.inverse() * de).translation().squaredNorm();
    ++n;
  }
  if (n == 0) throw EvaluationError("rms_rte: no overlapping pose pairs");
  return std::sqrt(sq / static_cast<double>(n));
}

Evaluation evaluate(std::span<const StampedPose> estimate, std::span<const StampedPose> reference,
                    double delta, double max_dt) {
  const auto pairs = associate(estimate, reference, max_dt);
  std::vector<Vec3> est;
  std::vector<Vec3> ref;
  for (const auto& [i, j] : pairs) {
    est.push_back(estimate[i].pose.translation());
    ref.push_back(reference[j].pose.translation());
  }
  Evaluation out;
  out.pairs = pairs.size();
  out.alignment = align_sim3(est, ref);
  out.ate = alignment_rmse(out.alignment, est, ref);
  const std::vector<StampedPose> aligned = transformed(out.alignment, estimate);
  out.rms_rte = rms_rte(aligned, reference, delta);
  return out;
}

std::vector<StampedPose> stamped(std::span<const MotionState> states) {
  std::vector<StampedPose> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back({s.t, s.pose});
  return out;
}

}  // namespace ctevo

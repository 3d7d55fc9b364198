// White-noise-on-acceleration Gaussian-process motion prior on SE(3).
//
// A knot perturbation is the 12-vector [d_xi; d_varpi] with
//   T <- T * exp(d_xi^),   varpi <- varpi + d_varpi.
// Every Jacobian in this header is taken with respect to that perturbation.

#pragma once

#include "ctevo/lie.hpp"

#include <stdexcept>

namespace ctevo {

using Mat12x24 = Eigen::Matrix<double, 12, 24>;

class GpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Trajectory knot: body->world pose and body-frame generalized velocity.
struct MotionState {
  double t = 0.0;
  Pose pose;
  Twist velocity = Twist::Zero();
};

/// Local linear state [xi; xi_dot] in the tangent space of an anchor knot.
struct LocalState {
  Twist xi = Twist::Zero();
  Twist xi_dot = Twist::Zero();

  Vec12 stacked() const {
    Vec12 v;
    v << xi, xi_dot;
    return v;
  }
};

/// Power spectral density Q_c of the white acceleration noise.
class QcModel {
 public:
  /// Defaults to identity (sigma_a = 1 m/s^1.5, sigma_alpha = 1 rad/s^1.5).
  QcModel() = default;
  /// Throws GpError unless psd is symmetric positive definite.
  explicit QcModel(const Mat6& psd);

  static QcModel Diagonal(double sigma_translation, double sigma_rotation);

  const Mat6& matrix() const { return psd_; }

 private:
  Mat6 psd_ = Mat6::Identity();
};

/// Phi(dt) = [[I, dt I], [0, I]]. Throws GpError for dt < 0.
Mat12 transition(double dt);

/// Q(dt) = [[dt^3/3 Qc, dt^2/2 Qc], [dt^2/2 Qc, dt Qc]]. Throws for dt <= 0.
Mat12 process_cov(double dt, const QcModel& qc);

struct PriorResidual {
  Vec12 residual;
  Mat12 jac_first;   // d residual / d perturbation of the earlier knot
  Mat12 jac_second;  // d residual / d perturbation of the later knot
};

/// Unweighted prior residual
///   [ dt*varpi_k - xi ; varpi_k - J_r(xi)^-1 varpi_k1 ],  xi = log(T_k^-1 T_k1).
/// Throws GpError on non-increasing timestamps and LieError when the relative
/// rotation is too large to take a logarithm.
PriorResidual prior_residual(const MotionState& xk, const MotionState& xk1);

/// Prior residual whitened by the process covariance: L^-1 e with Q = L L^T.
PriorResidual whitened_prior_residual(const MotionState& xk, const MotionState& xk1,
                                      const QcModel& qc);

/// Interpolation gains: gamma(t) = Lambda gamma(t_k) + Psi gamma(t_k1).
struct InterpolationGains {
  Mat12 lambda;
  Mat12 psi;
};

/// tau = t - t_k in [0, dt]. The endpoints are returned exactly:
/// tau = 0 gives (I, 0) and tau = dt gives (0, I).
InterpolationGains interpolation_gains(double tau, double dt, const QcModel& qc);

struct Interpolation {
  MotionState state;
  LocalState local;
  /// d gamma_k(t) / d [perturbation of x_k; perturbation of x_k1].
  Mat12x24 local_jacobian;
  /// d [pose perturbation of T(t); velocity of x(t)] / d [x_k; x_k1].
  Mat12x24 state_jacobian;
};

/// Queries the trajectory between two knots. Throws GpError if t lies outside
/// [xk.t, xk1.t].
Interpolation interpolate(const MotionState& xk, const MotionState& xk1, const QcModel& qc,
                          double t);

/// Same as above with precomputed gains for tau = t - xk.t.
Interpolation interpolate(const MotionState& xk, const MotionState& xk1,
                          const InterpolationGains& gains, double t);

/// Pose only, without Jacobians.
Pose interpolate_pose(const MotionState& xk, const MotionState& xk1,
                      const InterpolationGains& gains);

/// Quantities shared by every query between the same two knots.
struct KnotPair {
  MotionState first;
  MotionState second;
  Twist xi = Twist::Zero();  // log(T_k^-1 T_k1)
  Mat6 jr_inv;
  Mat6 jl_inv;
  Twist v_end = Twist::Zero();  // J_r(xi)^-1 varpi_k1
  Mat6 d_vend;                  // d v_end / d xi
};

KnotPair prepare_pair(const MotionState& xk, const MotionState& xk1);

struct PoseQuery {
  Pose pose;
  /// d [pose perturbation of T(t)] / d [x_k; x_k1].
  Eigen::Matrix<double, 6, 24> jacobian;
};

/// Interpolated pose and its Jacobian; equals the pose rows of interpolate().
PoseQuery interpolate_pose(const KnotPair& pair, const InterpolationGains& gains);

/// Constant-velocity extrapolation: T * exp(dt varpi), same velocity.
MotionState extrapolate(const MotionState& x, double dt);

}  // namespace ctevo

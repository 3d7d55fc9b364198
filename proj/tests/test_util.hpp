// Shared helpers for the test suites: random generators and central
// finite-difference oracles that do not reuse any analytic Jacobian.

#pragma once

#include "ctevo/gp_motion.hpp"
#include "ctevo/lie.hpp"

#include <Eigen/Core>

#include <functional>
#include <random>

namespace ctevo::testing {

inline Twist random_twist(std::mt19937_64& rng, double trans_scale, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Twist xi;
  for (int i = 0; i < 3; ++i) xi(i) = trans_scale * u(rng);
  Vec3 axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = max_angle * std::abs(u(rng));
  xi.tail<3>() = angle * axis;
  return xi;
}

inline Pose random_pose(std::mt19937_64& rng, double trans_scale = 2.0, double max_angle = 2.5) {
  return se3_exp(random_twist(rng, trans_scale, max_angle));
}

/// Central differences of f: R^n -> R^m around x.
inline Eigen::MatrixXd numeric_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
    double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp(i) += h;
    xm(i) -= h;
    jac.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return jac;
}

/// Knot perturbed by [d_xi; d_varpi] as T exp(d_xi^), varpi + d_varpi.
inline MotionState perturb(const MotionState& x, const Eigen::VectorXd& d) {
  MotionState y = x;
  y.pose = x.pose * se3_exp(d.head<6>());
  y.velocity = x.velocity + d.segment<6>(6);
  return y;
}

/// Column-wise relative error with an absolute floor.
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                             double floor = 1e-3) {
  double worst = 0.0;
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    const double denom = std::max(b.col(c).norm(), floor);
    worst = std::max(worst, (a.col(c) - b.col(c)).norm() / denom);
  }
  return worst;
}

}  // namespace ctevo::testing

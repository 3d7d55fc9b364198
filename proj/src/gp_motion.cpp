#include "ctevo/gp_motion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace ctevo {

QcModel::QcModel(const Mat6& psd) : psd_(psd) {
  if (!psd.allFinite() || (psd - psd.transpose()).cwiseAbs().maxCoeff() > 1e-12 * psd.norm()) {
    throw GpError("QcModel: power spectral density must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat6> eig(psd);
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw GpError("QcModel: power spectral density must be positive definite");
  }
}

QcModel QcModel::Diagonal(double sigma_translation, double sigma_rotation) {
  Vec6 d;
  d << Vec3::Constant(sigma_translation * sigma_translation),
      Vec3::Constant(sigma_rotation * sigma_rotation);
  return QcModel(d.asDiagonal().toDenseMatrix());
}

Mat12 transition(double dt) {
  if (!(dt >= 0.0)) throw GpError("transition: negative time step");
  Mat12 phi = Mat12::Identity();
  phi.topRightCorner<6, 6>() = dt * Mat6::Identity();
  return phi;
}

namespace {

// Process covariance that also accepts dt = 0 (zero matrix).
Mat12 process_cov_unchecked(double dt, const Mat6& qc) {
  Mat12 q;
  q.topLeftCorner<6, 6>() = (dt * dt * dt / 3.0) * qc;
  q.topRightCorner<6, 6>() = (dt * dt / 2.0) * qc;
  q.bottomLeftCorner<6, 6>() = (dt * dt / 2.0) * qc;
  q.bottomRightCorner<6, 6>() = dt * qc;
  return q;
}

}  // namespace

Mat12 process_cov(double dt, const QcModel& qc) {
  if (!(dt > 0.0)) throw GpError("process_cov: time step must be positive");
  return process_cov_unchecked(dt, qc.matrix());
}

PriorResidual prior_residual(const MotionState& xk, const MotionState& xk1) {
  const double dt = xk1.t - xk.t;
  if (!(dt > 0.0)) throw GpError("prior_residual: knot timestamps must increase");

  const Twist xi = se3_log(xk.pose.inverse() * xk1.pose);
  const Mat6 jr_inv = right_jacobian_inverse(xi);
  const Mat6 jl_inv = lie::se3_left_jacobian_inverse<double>(xi);
  const Mat6 d_jrinv = lie::right_jacobian_inverse_product_derivative(xi, xk1.velocity);

  PriorResidual out;
  out.residual.head<6>() = dt * xk.velocity - xi;
  out.residual.tail<6>() = xk.velocity - jr_inv * xk1.velocity;

  // d xi / d(first pose) = -J_l^-1, d xi / d(second pose) = J_r^-1
  out.jac_first.setZero();
  out.jac_first.topLeftCorner<6, 6>() = jl_inv;
  out.jac_first.topRightCorner<6, 6>() = dt * Mat6::Identity();
  out.jac_first.bottomLeftCorner<6, 6>() = d_jrinv * jl_inv;
  out.jac_first.bottomRightCorner<6, 6>() = Mat6::Identity();

  out.jac_second.setZero();
  out.jac_second.topLeftCorner<6, 6>() = -jr_inv;
  out.jac_second.bottomLeftCorner<6, 6>() = -d_jrinv * jr_inv;
  out.jac_second.bottomRightCorner<6, 6>() = -jr_inv;
  return out;
}

PriorResidual whitened_prior_residual(const MotionState& xk, const MotionState& xk1,
                                      const QcModel& qc) {
  PriorResidual r = prior_residual(xk, xk1);
  const Eigen::LLT<Mat12> llt(process_cov(xk1.t - xk.t, qc));
  const auto L = llt.matrixL();
  L.solveInPlace(r.residual);
  L.solveInPlace(r.jac_first);
  L.solveInPlace(r.jac_second);
  return r;
}

InterpolationGains interpolation_gains(double tau, double dt, const QcModel& qc) {
  if (!(dt > 0.0)) throw GpError("interpolation_gains: knot interval must be positive");
  if (tau < 0.0 || tau > dt) throw GpError("interpolation_gains: query outside knot interval");
  InterpolationGains g;
  if (tau == 0.0) {
    g.lambda = Mat12::Identity();
    g.psi = Mat12::Zero();
    return g;
  }
  if (tau == dt) {
    g.lambda = Mat12::Zero();
    g.psi = Mat12::Identity();
    return g;
  }
  const Mat12 q_tau = process_cov_unchecked(tau, qc.matrix());
  const Mat12 q_dt = process_cov_unchecked(dt, qc.matrix());
  // psi = Q_tau Phi(dt - tau)^T Q_dt^-1, computed as (Q_dt^-1 Phi(dt - tau) Q_tau)^T
  g.psi = q_dt.ldlt().solve(transition(dt - tau) * q_tau).transpose();
  g.lambda = transition(tau) - g.psi * transition(dt);
  return g;
}

Interpolation interpolate(const MotionState& xk, const MotionState& xk1, const QcModel& qc,
                          double t) {
  if (t < xk.t || t > xk1.t) throw GpError("interpolate: query time outside knot interval");
  return interpolate(xk, xk1, interpolation_gains(t - xk.t, xk1.t - xk.t, qc), t);
}

Interpolation interpolate(const MotionState& xk, const MotionState& xk1,
                          const InterpolationGains& gains, double t) {
  const Twist xi = se3_log(xk.pose.inverse() * xk1.pose);
  const Mat6 jr_inv = right_jacobian_inverse(xi);
  const Mat6 jl_inv = lie::se3_left_jacobian_inverse<double>(xi);
  const Twist v_end = jr_inv * xk1.velocity;
  const Mat6 d_vend = lie::right_jacobian_inverse_product_derivative(xi, xk1.velocity);

  Vec12 gamma_start;
  gamma_start << Twist::Zero(), xk.velocity;
  Vec12 gamma_end;
  gamma_end << xi, v_end;
  const Vec12 gamma = gains.lambda * gamma_start + gains.psi * gamma_end;

  Interpolation out;
  out.local.xi = gamma.head<6>();
  out.local.xi_dot = gamma.tail<6>();
  out.state.t = t;
  out.state.pose = xk.pose * se3_exp(out.local.xi);
  const Mat6 jr_t = right_jacobian(out.local.xi);
  out.state.velocity = jr_t * out.local.xi_dot;

  // gamma(t) depends on xi through both halves of gamma_end.
  const Eigen::Matrix<double, 12, 6> d_gamma_d_xi =
      gains.psi.leftCols<6>() + gains.psi.rightCols<6>() * d_vend;

  Mat12x24& lj = out.local_jacobian;
  lj.block<12, 6>(0, 0) = -d_gamma_d_xi * jl_inv;
  lj.block<12, 6>(0, 6) = gains.lambda.rightCols<6>();
  lj.block<12, 6>(0, 12) = d_gamma_d_xi * jr_inv;
  lj.block<12, 6>(0, 18) = gains.psi.rightCols<6>() * jr_inv;

  // T(t) = T_k exp(xi(t)): right perturbation eps = Ad(exp(-xi(t))) d_xi_k + J_r(xi(t)) d xi(t)
  // varpi(t) = J_r(xi(t)) xi_dot(t)
  const Mat6 d_vel = lie::right_jacobian_product_derivative(out.local.xi, out.local.xi_dot);
  Mat12x24& sj = out.state_jacobian;
  sj.topRows<6>() = jr_t * lj.topRows<6>();
  sj.block<6, 6>(0, 0) += se3_exp(-out.local.xi).adjoint();
  sj.bottomRows<6>() = d_vel * lj.topRows<6>() + jr_t * lj.bottomRows<6>();
  return out;
}

Pose interpolate_pose(const MotionState& xk, const MotionState& xk1,
                      const InterpolationGains& gains) {
  const Twist xi = se3_log(xk.pose.inverse() * xk1.pose);
  const Twist v_end = right_jacobian_inverse(xi) * xk1.velocity;
  const Twist xi_t = gains.lambda.topRightCorner<6, 6>() * xk.velocity +
                     gains.psi.topLeftCorner<6, 6>() * xi +
                     gains.psi.topRightCorner<6, 6>() * v_end;
  return xk.pose * se3_exp(xi_t);
}

KnotPair prepare_pair(const MotionState& xk, const MotionState& xk1) {
  KnotPair p;
  p.first = xk;
  p.second = xk1;
  p.xi = se3_log(xk.pose.inverse() * xk1.pose);
  p.jr_inv = right_jacobian_inverse(p.xi);
  p.jl_inv = lie::se3_left_jacobian_inverse<double>(p.xi);
  p.v_end = p.jr_inv * xk1.velocity;
  p.d_vend = lie::right_jacobian_inverse_product_derivative(p.xi, xk1.velocity);
  return p;
}

PoseQuery interpolate_pose(const KnotPair& pair, const InterpolationGains& gains) {
  const Twist xi_t = gains.lambda.topRightCorner<6, 6>() * pair.first.velocity +
                     gains.psi.topLeftCorner<6, 6>() * pair.xi +
                     gains.psi.topRightCorner<6, 6>() * pair.v_end;
  const Eigen::Matrix<double, 6, 6> d_xi =
      gains.psi.topLeftCorner<6, 6>() + gains.psi.topRightCorner<6, 6>() * pair.d_vend;
  const Mat6 jr_t = right_jacobian(xi_t);

  PoseQuery out;
  out.pose = pair.first.pose * se3_exp(xi_t);
  Eigen::Matrix<double, 6, 24>& j = out.jacobian;
  j.block<6, 6>(0, 0) = se3_exp(-xi_t).adjoint() - jr_t * d_xi * pair.jl_inv;
  j.block<6, 6>(0, 6) = jr_t * gains.lambda.topRightCorner<6, 6>();
  j.block<6, 6>(0, 12) = jr_t * d_xi * pair.jr_inv;
  j.block<6, 6>(0, 18) = jr_t * gains.psi.topRightCorner<6, 6>() * pair.jr_inv;
  return out;
}

MotionState extrapolate(const MotionState& x, double dt) {
  return {x.t + dt, x.pose * se3_exp(dt * x.velocity), x.velocity};
}

}  // namespace ctevo

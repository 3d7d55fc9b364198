#include "ctevo/gp_motion.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

namespace ctevo {
namespace {

using testing::perturb;
using testing::random_pose;
using testing::random_twist;

MotionState random_state(std::mt19937_64& rng, double t) {
  return {t, random_pose(rng, 1.0, 1.0), random_twist(rng, 1.0, 1.0)};
}

// Knot pair whose relative motion stays well inside the log domain.
std::pair<MotionState, MotionState> random_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.3);
  const MotionState a = random_state(rng, 1.0);
  const double dt = u(rng);
  MotionState b;
  b.t = a.t + dt;
  b.pose = a.pose * se3_exp(dt * a.velocity + random_twist(rng, 0.1, 0.2));
  b.velocity = a.velocity + random_twist(rng, 0.5, 0.5);
  return {a, b};
}

TEST(Transition, ZeroStepIsIdentity) { EXPECT_EQ(transition(0.0), Mat12::Identity()); }

TEST(Transition, UpperRightBlockIsStep) {
  const Mat12 phi = transition(2.0);
  EXPECT_EQ((phi.topRightCorner<6, 6>()), 2.0 * Mat6::Identity());
  EXPECT_EQ((phi.bottomLeftCorner<6, 6>()), Mat6::Zero());
}

TEST(Transition, SemigroupProperty) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    const double t0 = u(rng), t1 = t0 + u(rng), t2 = t1 + u(rng);
    EXPECT_TRUE((transition(t2 - t1) * transition(t1 - t0)).isApprox(transition(t2 - t0), 1e-14));
  }
}

TEST(Transition, NegativeStepThrows) { EXPECT_THROW(transition(-1e-3), GpError); }

TEST(ProcessCov, UnitStepIdentityPsd) {
  const Mat12 q = process_cov(1.0, QcModel());
  EXPECT_TRUE((q.topLeftCorner<6, 6>().isApprox(Mat6::Identity() / 3.0)));
  EXPECT_TRUE((q.topRightCorner<6, 6>().isApprox(Mat6::Identity() / 2.0)));
  EXPECT_TRUE((q.bottomLeftCorner<6, 6>().isApprox(Mat6::Identity() / 2.0)));
  EXPECT_TRUE((q.bottomRightCorner<6, 6>().isApprox(Mat6::Identity())));
}

TEST(ProcessCov, ExactlySymmetric) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(1e-3, 5.0);
  const QcModel qc = QcModel::Diagonal(0.7, 1.3);
  for (int i = 0; i < 50; ++i) {
    const Mat12 q = process_cov(u(rng), qc);
    EXPECT_EQ(q, q.transpose());
  }
}

TEST(ProcessCov, MatchesQuadratureOracle) {
  // Q(dt) = int_0^dt Phi(dt, s) L Qc L^T Phi(dt, s)^T ds, composite Simpson.
  Mat6 a = Mat6::Random();
  const QcModel qc(a * a.transpose() + Mat6::Identity());
  Eigen::Matrix<double, 12, 6> l = Eigen::Matrix<double, 12, 6>::Zero();
  l.bottomRows<6>() = Mat6::Identity();
  for (double dt : {0.01, 0.05, 0.4, 2.0}) {
    const int n = 200;
    const double h = dt / n;
    Mat12 integral = Mat12::Zero();
    for (int k = 0; k <= n; ++k) {
      const double s = k * h;
      Mat12 phi = Mat12::Identity();
      phi.topRightCorner<6, 6>() = (dt - s) * Mat6::Identity();
      const Mat12 f = phi * l * qc.matrix() * l.transpose() * phi.transpose();
      const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      integral += w * f;
    }
    integral *= h / 3.0;
    const Mat12 q = process_cov(dt, qc);
    EXPECT_LT((q - integral).norm() / integral.norm(), 1e-6) << "dt=" << dt;
  }
}

TEST(ProcessCov, NonPositiveStepThrows) {
  EXPECT_THROW(process_cov(0.0, QcModel()), GpError);
  EXPECT_THROW(process_cov(-1.0, QcModel()), GpError);
}

TEST(QcModel, RejectsIndefinite) {
  Mat6 m = Mat6::Identity();
  m(2, 2) = -1.0;
  EXPECT_THROW(QcModel{m}, GpError);
}

TEST(PriorResidual, ZeroOnConstantVelocityTranslation) {
  MotionState a{0.0, Pose(Mat3::Identity(), Vec3(1, 2, 3)), Twist::Zero()};
  a.velocity << 0.5, -1.0, 2.0, 0, 0, 0;
  const MotionState b = extrapolate(a, 0.1);
  EXPECT_LT(prior_residual(a, b).residual.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(PriorResidual, ZeroOnScrewMotion) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    MotionState a = random_state(rng, 0.3);
    const double dt = 0.2;
    MotionState b;
    b.t = a.t + dt;
    b.pose = a.pose * se3_exp(dt * a.velocity);
    // varpi_{k+1} = J_r(dt varpi_k) varpi_k, which equals varpi_k on a screw
    b.velocity = right_jacobian(dt * a.velocity) * a.velocity;
    EXPECT_LT(prior_residual(a, b).residual.cwiseAbs().maxCoeff(), 1e-10);
    b.velocity = a.velocity;
    EXPECT_LT(prior_residual(a, b).residual.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(PriorResidual, NonIncreasingTimesThrow) {
  MotionState a;
  MotionState b;
  a.t = b.t = 1.0;
  EXPECT_THROW(prior_residual(a, b), GpError);
}

TEST(PriorResidual, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 100; ++i) {
    const auto [a, b] = random_pair(rng);
    const PriorResidual r = prior_residual(a, b);
    const auto fa = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return prior_residual(perturb(a, d), b).residual;
    };
    const auto fb = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return prior_residual(a, perturb(b, d)).residual;
    };
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(12);
    EXPECT_LT(testing::relative_error(r.jac_first, testing::numeric_jacobian(fa, zero)), 1e-5);
    EXPECT_LT(testing::relative_error(r.jac_second, testing::numeric_jacobian(fb, zero)), 1e-5);
  }
}

TEST(PriorResidual, WhiteningMatchesMahalanobisNorm) {
  std::mt19937_64 rng(14);
  const QcModel qc = QcModel::Diagonal(0.4, 2.0);
  for (int i = 0; i < 10; ++i) {
    const auto [a, b] = random_pair(rng);
    const Vec12 e = prior_residual(a, b).residual;
    const Mat12 q = process_cov(b.t - a.t, qc);
    const double mahalanobis = e.dot(q.ldlt().solve(e));
    EXPECT_NEAR(whitened_prior_residual(a, b, qc).residual.squaredNorm(), mahalanobis,
                1e-9 * mahalanobis);
  }
}

TEST(Interpolate, EndpointsReproduceKnots) {
  std::mt19937_64 rng(15);
  const QcModel qc = QcModel::Diagonal(1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const auto [a, b] = random_pair(rng);
    const Interpolation start = interpolate(a, b, qc, a.t);
    const Interpolation end = interpolate(a, b, qc, b.t);
    EXPECT_EQ(start.state.pose.matrix(), a.pose.matrix());
    EXPECT_EQ(start.state.velocity, a.velocity);
    EXPECT_LT((end.state.pose.matrix() - b.pose.matrix()).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((end.state.velocity - b.velocity).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Interpolate, StraightLineMidpoint) {
  MotionState a{2.0, Pose(Mat3::Identity(), Vec3(-1, 0, 0.5)), Twist::Zero()};
  a.velocity << 1.0, 0.5, -0.25, 0, 0, 0;
  const MotionState b = extrapolate(a, 0.4);
  const Interpolation mid = interpolate(a, b, QcModel::Diagonal(0.3, 0.3), 2.2);
  const Vec3 expected = 0.5 * (a.pose.translation() + b.pose.translation());
  EXPECT_LT((mid.state.pose.translation() - expected).norm(), 1e-12);
  EXPECT_LT((mid.state.velocity - a.velocity).norm(), 1e-12);
  EXPECT_LT((mid.state.pose.rotation() - Mat3::Identity()).norm(), 1e-15);
}

TEST(Interpolate, GainIdentityPsiTimesQ) {
  const QcModel qc = QcModel::Diagonal(0.5, 2.0);
  const double dt = 0.05;
  for (double tau : {0.001, 0.0125, 0.025, 0.049}) {
    const InterpolationGains g = interpolation_gains(tau, dt, qc);
    const Mat12 lhs = g.psi * process_cov(dt, qc);
    const Mat12 rhs = process_cov(tau, qc) * transition(dt - tau).transpose();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Interpolate, StationaryStaysPut) {
  std::mt19937_64 rng(16);
  const Pose p = random_pose(rng);
  const MotionState a{0.0, p, Twist::Zero()};
  const MotionState b{0.1, p, Twist::Zero()};
  for (double t : {0.0, 0.013, 0.05, 0.0999, 0.1}) {
    const Interpolation x = interpolate(a, b, QcModel(), t);
    EXPECT_LT((x.state.pose.matrix() - p.matrix()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT(x.state.velocity.norm(), 1e-14);
  }
}

TEST(Interpolate, OutsideIntervalThrows) {
  const MotionState a{0.0, Pose(), Twist::Zero()};
  const MotionState b{0.1, Pose(), Twist::Zero()};
  EXPECT_THROW(interpolate(a, b, QcModel(), -1e-9), GpError);
  EXPECT_THROW(interpolate(a, b, QcModel(), 0.1 + 1e-9), GpError);
}

TEST(Interpolate, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(17);
  const QcModel qc = QcModel::Diagonal(1.0, 0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const auto [a, b] = random_pair(rng);
    const double t = a.t + u(rng) * (b.t - a.t);
    const Interpolation base = interpolate(a, b, qc, t);

    const auto eval = [&](const Eigen::VectorXd& d, bool local) -> Eigen::VectorXd {
      const Interpolation x =
          interpolate(perturb(a, d.head<12>()), perturb(b, d.tail<12>()), qc, t);
      if (local) return x.local.stacked();
      Eigen::VectorXd out(12);
      out.head<6>() = se3_log(base.state.pose.inverse() * x.state.pose);
      out.tail<6>() = x.state.velocity;
      return out;
    };
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(24);
    const Eigen::MatrixXd fd_local =
        testing::numeric_jacobian([&](const Eigen::VectorXd& d) { return eval(d, true); }, zero);
    const Eigen::MatrixXd fd_state =
        testing::numeric_jacobian([&](const Eigen::VectorXd& d) { return eval(d, false); }, zero);
    EXPECT_LT(testing::relative_error(base.local_jacobian, fd_local), 1e-5);
    EXPECT_LT(testing::relative_error(base.state_jacobian, fd_state), 1e-5);
  }
}

TEST(Interpolate, PoseQueryMatchesFullInterpolation) {
  std::mt19937_64 rng(18);
  const QcModel qc = QcModel::Diagonal(0.7, 1.3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const auto [a, b] = random_pair(rng);
    const double t = a.t + u(rng) * (b.t - a.t);
    const InterpolationGains g = interpolation_gains(t - a.t, b.t - a.t, qc);
    const Interpolation full = interpolate(a, b, g, t);
    const PoseQuery q = interpolate_pose(prepare_pair(a, b), g);
    EXPECT_LT((q.pose.matrix() - full.state.pose.matrix()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((q.jacobian - full.state_jacobian.topRows<6>()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

}  // namespace
}  // namespace ctevo

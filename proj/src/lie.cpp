#include "ctevo/lie.hpp"

#include <Eigen/SVD>
#include <ceres/jet.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ctevo {

namespace lie {

Mat6 curly_hat(const Twist& xi) {
  Mat6 ad = Mat6::Zero();
  const Mat3 phi_hat = skew<double>(xi.tail<3>());
  ad.topLeftCorner<3, 3>() = phi_hat;
  ad.bottomRightCorner<3, 3>() = phi_hat;
  ad.topRightCorner<3, 3>() = skew<double>(xi.head<3>());
  return ad;
}

namespace {

using Jet6 = ceres::Jet<double, 6>;
using JetTwist = Eigen::Matrix<Jet6, 6, 1>;

JetTwist seed(const Twist& xi) {
  JetTwist x;
  for (int i = 0; i < 6; ++i) x(i) = Jet6(xi(i), i);
  return x;
}

Mat6 extract(const JetTwist& y) {
  Mat6 d;
  for (int r = 0; r < 6; ++r) d.row(r) = y(r).v.transpose();
  return d;
}

}  // namespace

Mat6 right_jacobian_inverse_product_derivative(const Twist& xi, const Twist& v) {
  const JetTwist x = seed(xi);
  const JetTwist y = right_jacobian_inverse<Jet6>(x) * v.cast<Jet6>();
  return extract(y);
}

Mat6 right_jacobian_product_derivative(const Twist& xi, const Twist& v) {
  const JetTwist x = seed(xi);
  const JetTwist y = right_jacobian<Jet6>(x) * v.cast<Jet6>();
  return extract(y);
}

}  // namespace lie

Pose Pose::FromQuaternion(const Eigen::Quaterniond& q, const Vec3& translation) {
  return {q.normalized().toRotationMatrix(), translation};
}

Eigen::Quaterniond Pose::quaternion() const {
  Eigen::Quaterniond q(rotation_);
  q.normalize();
  if (q.w() < 0) q.coeffs() *= -1.0;
  return q;
}

Pose Pose::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -rt * translation_};
}

Pose Pose::operator*(const Pose& other) const {
  return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Mat6 Pose::adjoint() const {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = rotation_;
  ad.bottomRightCorner<3, 3>() = rotation_;
  ad.topRightCorner<3, 3>() = lie::skew<double>(translation_) * rotation_;
  return ad;
}

void Pose::normalize() {
  Eigen::JacobiSVD<Mat3> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) *= -1.0;
  rotation_ = u * v.transpose();
}

bool Pose::is_valid(double tol) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  const double ortho = (rotation_ * rotation_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(rotation_.determinant() - 1.0) < tol;
}

Mat4 hat(const Twist& xi) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = lie::skew<double>(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

Twist vee(const Mat4& m, double tol) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const Mat3 w = m.topLeftCorner<3, 3>();
  const bool skew_ok = (w + w.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
  const bool bottom_ok = m.row(3).cwiseAbs().maxCoeff() <= tol * scale;
  if (!skew_ok || !bottom_ok) throw LieError("vee: matrix is not an element of se(3)");
  Twist xi;
  xi << m(0, 3), m(1, 3), m(2, 3), w(2, 1), w(0, 2), w(1, 0);
  return xi;
}

Mat3 so3_exp(const Vec3& phi) { return lie::so3_exp<double>(phi); }

double rotation_angle(const Mat3& rotation) {
  const Vec3 w(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));
  const double s = 0.5 * w.norm();
  const double c = 0.5 * (rotation.trace() - 1.0);
  return std::atan2(s, c);
}

Vec3 so3_log(const Mat3& rotation) {
  const Vec3 w(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));
  const double s = 0.5 * w.norm();
  const double c = 0.5 * (rotation.trace() - 1.0);
  const double theta = std::atan2(s, c);
  if (theta > std::numbers::pi - lie::kPiMargin) {
    throw LieError("so3_log: rotation angle too close to pi");
  }
  if (theta < lie::kSmallAngle) {
    // theta / sin(theta) = asin(s) / s for c > 0
    const double s2 = s * s;
    const double g = 1.0 + s2 / 6.0 + 3.0 * s2 * s2 / 40.0 + 5.0 * s2 * s2 * s2 / 112.0;
    return 0.5 * g * w;
  }
  if (c > -0.5) return (theta / (2.0 * s)) * w;

  // Near pi the antisymmetric part loses precision; recover the axis from the
  // symmetric part (1 - c) a a^T instead.
  const Mat3 b = 0.5 * (rotation + rotation.transpose()) - c * Mat3::Identity();
  Eigen::Index i = 0;
  b.diagonal().maxCoeff(&i);
  Vec3 axis = b.col(i) / std::sqrt(b(i, i) * (1.0 - c));
  axis.normalize();
  if (axis.dot(w) < 0) axis = -axis;
  return theta * axis;
}

Pose se3_exp(const Twist& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  return {so3_exp(phi), lie::so3_left_jacobian<double>(phi) * rho};
}

Twist se3_log(const Pose& pose) {
  const Vec3 phi = so3_log(pose.rotation());
  Twist xi;
  xi.head<3>() = lie::so3_left_jacobian_inverse<double>(phi) * pose.translation();
  xi.tail<3>() = phi;
  return xi;
}

Pose interpolate_pose(const Pose& a, const Pose& b, double alpha) {
  const Eigen::Quaterniond qa = a.quaternion();
  const Eigen::Quaterniond qb = b.quaternion();
  const Vec3 t = (1.0 - alpha) * a.translation() + alpha * b.translation();
  return {qa.slerp(alpha, qb).toRotationMatrix(), t};
}

}  // namespace ctevo

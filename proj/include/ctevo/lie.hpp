// SO(3) / SE(3) operations and Jacobians.
//
// Twists are ordered [rho; phi]: translational part first, rotational part
// second. Poses map body-frame vectors into the world frame. All Jacobians use
// the right-perturbation convention T * exp(delta^).
//
// The Jacobian kernels are templated on the scalar type so they can be
// evaluated with dual numbers when their derivative is needed.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace ctevo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat12 = Eigen::Matrix<double, 12, 12>;

/// Element of se(3) in [rho; phi] order.
using Twist = Vec6;

/// Raised when an operation is evaluated outside its domain (e.g. a logarithm
/// of a rotation too close to pi).
class LieError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace lie {

/// Below this rotation angle the closed-form coefficients are replaced by
/// their Taylor series (truncated at theta^6; both branches agree to ~1e-16).
inline constexpr double kSmallAngle = 1e-2;
/// Logarithms are refused for angles above pi - kPiMargin.
inline constexpr double kPiMargin = 1e-6;

template <typename T>
Eigen::Matrix<T, 3, 3> skew(const Eigen::Matrix<T, 3, 1>& v) {
  Eigen::Matrix<T, 3, 3> s;
  // clang-format off
  s << T(0), -v(2),  v(1),
       v(2),  T(0), -v(0),
      -v(1),  v(0),  T(0);
  // clang-format on
  return s;
}

/// Coefficients of the SO(3)/SE(3) series, all as functions of theta.
///   a = sin(t)/t            b = (1-cos t)/t^2       c = (t - sin t)/t^3
///   d = 1/t^2 - (1+cos t)/(2 t sin t)
///   e = (t^2 + 2 cos t - 2)/(2 t^4)
///   f = (2t - 3 sin t + t cos t)/(2 t^5)
template <typename T>
struct RotationCoeffs {
  T a, b, c, d, e, f;
};

template <typename T>
RotationCoeffs<T> rotation_coeffs(const Eigen::Matrix<T, 3, 1>& phi) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T t2 = phi.squaredNorm();
  RotationCoeffs<T> k;
  if (t2 < T(kSmallAngle * kSmallAngle)) {
    const T t4 = t2 * t2;
    const T t6 = t4 * t2;
    k.a = T(1) - t2 / T(6) + t4 / T(120) - t6 / T(5040);
    k.b = T(0.5) - t2 / T(24) + t4 / T(720) - t6 / T(40320);
    k.c = T(1.0 / 6.0) - t2 / T(120) + t4 / T(5040) - t6 / T(362880);
    k.d = T(1.0 / 12.0) + t2 / T(720) + t4 / T(30240) + t6 / T(1209600);
    k.e = T(1.0 / 24.0) - t2 / T(720) + t4 / T(40320) - t6 / T(3628800);
    k.f = T(1.0 / 120.0) - t2 / T(2520) + t4 / T(120960) - t6 / T(9979200);
    return k;
  }
  const T t = sqrt(t2);
  const T s = sin(t);
  const T c = cos(t);
  k.a = s / t;
  k.b = (T(1) - c) / t2;
  k.c = (t - s) / (t2 * t);
  k.d = T(1) / t2 - (T(1) + c) / (T(2) * t * s);
  k.e = (t2 + T(2) * c - T(2)) / (T(2) * t2 * t2);
  k.f = (T(2) * t - T(3) * s + t * c) / (T(2) * t2 * t2 * t);
  return k;
}

template <typename T>
Eigen::Matrix<T, 3, 3> so3_exp(const Eigen::Matrix<T, 3, 1>& phi) {
  const auto k = rotation_coeffs(phi);
  const Eigen::Matrix<T, 3, 3> W = skew(phi);
  return Eigen::Matrix<T, 3, 3>::Identity() + k.a * W + k.b * W * W;
}

template <typename T>
Eigen::Matrix<T, 3, 3> so3_left_jacobian(const Eigen::Matrix<T, 3, 1>& phi) {
  const auto k = rotation_coeffs(phi);
  const Eigen::Matrix<T, 3, 3> W = skew(phi);
  return Eigen::Matrix<T, 3, 3>::Identity() + k.b * W + k.c * W * W;
}

template <typename T>
Eigen::Matrix<T, 3, 3> so3_left_jacobian_inverse(const Eigen::Matrix<T, 3, 1>& phi) {
  const auto k = rotation_coeffs(phi);
  const Eigen::Matrix<T, 3, 3> W = skew(phi);
  return Eigen::Matrix<T, 3, 3>::Identity() - T(0.5) * W + k.d * W * W;
}

template <typename T>
Eigen::Matrix<T, 3, 3> so3_right_jacobian(const Eigen::Matrix<T, 3, 1>& phi) {
  return so3_left_jacobian<T>(-phi);
}

template <typename T>
Eigen::Matrix<T, 3, 3> so3_right_jacobian_inverse(const Eigen::Matrix<T, 3, 1>& phi) {
  return so3_left_jacobian_inverse<T>(-phi);
}

/// Translational coupling block of the SE(3) left Jacobian.
template <typename T>
Eigen::Matrix<T, 3, 3> se3_q_block(const Eigen::Matrix<T, 3, 1>& rho,
                                   const Eigen::Matrix<T, 3, 1>& phi) {
  const auto k = rotation_coeffs(phi);
  const Eigen::Matrix<T, 3, 3> P = skew(phi);
  const Eigen::Matrix<T, 3, 3> R = skew(rho);
  const Eigen::Matrix<T, 3, 3> PR = P * R;
  const Eigen::Matrix<T, 3, 3> RP = R * P;
  const Eigen::Matrix<T, 3, 3> PRP = PR * P;
  return T(0.5) * R + k.c * (PR + RP + PRP) +
         k.e * (P * PR + RP * P - T(3) * PRP) + k.f * (PRP * P + P * PRP);
}

template <typename T>
Eigen::Matrix<T, 6, 6> se3_left_jacobian(const Eigen::Matrix<T, 6, 1>& xi) {
  const Eigen::Matrix<T, 3, 1> rho = xi.template head<3>();
  const Eigen::Matrix<T, 3, 1> phi = xi.template tail<3>();
  Eigen::Matrix<T, 6, 6> J = Eigen::Matrix<T, 6, 6>::Zero();
  const Eigen::Matrix<T, 3, 3> Jl = so3_left_jacobian(phi);
  J.template topLeftCorner<3, 3>() = Jl;
  J.template bottomRightCorner<3, 3>() = Jl;
  J.template topRightCorner<3, 3>() = se3_q_block(rho, phi);
  return J;
}

template <typename T>
Eigen::Matrix<T, 6, 6> se3_left_jacobian_inverse(const Eigen::Matrix<T, 6, 1>& xi) {
  const Eigen::Matrix<T, 3, 1> rho = xi.template head<3>();
  const Eigen::Matrix<T, 3, 1> phi = xi.template tail<3>();
  Eigen::Matrix<T, 6, 6> J = Eigen::Matrix<T, 6, 6>::Zero();
  const Eigen::Matrix<T, 3, 3> Jinv = so3_left_jacobian_inverse(phi);
  J.template topLeftCorner<3, 3>() = Jinv;
  J.template bottomRightCorner<3, 3>() = Jinv;
  J.template topRightCorner<3, 3>() = -Jinv * se3_q_block(rho, phi) * Jinv;
  return J;
}

/// J_r(xi) = J_l(-xi).
template <typename T>
Eigen::Matrix<T, 6, 6> right_jacobian(const Eigen::Matrix<T, 6, 1>& xi) {
  return se3_left_jacobian<T>(-xi);
}

template <typename T>
Eigen::Matrix<T, 6, 6> right_jacobian_inverse(const Eigen::Matrix<T, 6, 1>& xi) {
  return se3_left_jacobian_inverse<T>(-xi);
}

/// Adjoint of se(3): ad(xi) * v = [xi^, v^]^vee.
Mat6 curly_hat(const Twist& xi);

/// d(J_r(xi)^-1 * v) / d(xi), exact (forward-mode dual numbers).
Mat6 right_jacobian_inverse_product_derivative(const Twist& xi, const Twist& v);
/// d(J_r(xi) * v) / d(xi), exact.
Mat6 right_jacobian_product_derivative(const Twist& xi, const Twist& v);

}  // namespace lie

/// Rigid transform; rotation is kept as a matrix.
class Pose {
 public:
  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose Identity() { return {}; }
  static Pose FromQuaternion(const Eigen::Quaterniond& q, const Vec3& translation);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Eigen::Quaterniond quaternion() const;

  Pose inverse() const;
  Pose operator*(const Pose& other) const;
  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  Mat4 matrix() const;
  /// Ad(T) for [rho; phi] twists.
  Mat6 adjoint() const;

  /// Projects the rotation block back onto SO(3).
  void normalize();
  bool is_valid(double tol = 1e-9) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

Mat4 hat(const Twist& xi);
/// Throws LieError if the matrix is not of the form [phi^ rho; 0 0].
Twist vee(const Mat4& m, double tol = 1e-12);

Mat3 so3_exp(const Vec3& phi);
/// Throws LieError when the rotation angle exceeds pi - kPiMargin.
Vec3 so3_log(const Mat3& rotation);

Pose se3_exp(const Twist& xi);
Twist se3_log(const Pose& pose);

inline Mat6 right_jacobian(const Twist& xi) { return lie::right_jacobian<double>(xi); }
inline Mat6 right_jacobian_inverse(const Twist& xi) {
  return lie::right_jacobian_inverse<double>(xi);
}

/// Rotation angle in [0, pi].
double rotation_angle(const Mat3& rotation);

/// Spherical-linear interpolation between two poses (rotation slerp,
/// translation lerp), alpha in [0, 1].
Pose interpolate_pose(const Pose& a, const Pose& b, double alpha);

}  // namespace ctevo

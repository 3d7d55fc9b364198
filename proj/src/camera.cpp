#include "ctevo/camera.hpp"

namespace ctevo {

bool CameraModel::is_valid() const {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 && cx >= 0.0 && cx < width &&
         cy >= 0.0 && cy < height;
}

Vec2 CameraModel::project(const Vec3& p) const {
  return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
}

Eigen::Matrix<double, 2, 3> CameraModel::project_jacobian(const Vec3& p) const {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << fx * iz, 0.0, -fx * p.x() * iz * iz, 0.0, fy * iz, -fy * p.y() * iz * iz;
  return j;
}

Vec2 CameraModel::normalize(const Vec2& pixel) const {
  return {(pixel.x() - cx) / fx, (pixel.y() - cy) / fy};
}

namespace {

Vec2 apply_distortion(const Distortion& d, const Vec2& n) {
  const double x = n.x();
  const double y = n.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  return {x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x),
          y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y};
}

}  // namespace

Vec2 CameraModel::distort(const Vec2& pixel) const {
  if (distortion.is_zero()) return pixel;
  const Vec2 n = apply_distortion(distortion, normalize(pixel));
  return {fx * n.x() + cx, fy * n.y() + cy};
}

Vec2 CameraModel::undistort(const Vec2& raw) const {
  if (distortion.is_zero()) return raw;
  const Vec2 target = normalize(raw);
  // fixed-point iteration n <- target - (distort(n) - n)
  Vec2 n = target;
  for (int i = 0; i < 50; ++i) {
    const Vec2 next = target - (apply_distortion(distortion, n) - n);
    if ((next - n).squaredNorm() < 1e-24) {
      n = next;
      break;
    }
    n = next;
  }
  return {fx * n.x() + cx, fy * n.y() + cy};
}

bool CameraModel::contains(const Vec2& pixel, double margin) const {
  return pixel.x() >= margin && pixel.y() >= margin && pixel.x() <= width - 1 - margin &&
         pixel.y() <= height - 1 - margin;
}

}  // namespace ctevo

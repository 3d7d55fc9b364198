// Pinhole camera with optional radial-tangential distortion.
//
// The estimator works on undistorted pixels: measurements are undistorted once
// on entry and projection uses the plain pinhole model.

#pragma once

#include "ctevo/lie.hpp"

#include <optional>

namespace ctevo {

struct Distortion {
  double k1 = 0.0;
  double k2 = 0.0;
  double p1 = 0.0;
  double p2 = 0.0;

  bool is_zero() const { return k1 == 0.0 && k2 == 0.0 && p1 == 0.0 && p2 == 0.0; }
};

struct CameraModel {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  Distortion distortion;

  /// fx, fy > 0 and principal point inside the image.
  bool is_valid() const;

  /// Pinhole projection of a camera-frame point (z must be non-zero).
  Vec2 project(const Vec3& p_cam) const;
  /// d pixel / d p_cam.
  Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p_cam) const;

  /// Normalized image coordinates (x/z, y/z) of an undistorted pixel.
  Vec2 normalize(const Vec2& pixel) const;
  Vec3 bearing(const Vec2& pixel) const { return normalize(pixel).homogeneous().normalized(); }

  /// Maps a raw (distorted) pixel to its undistorted pinhole position.
  Vec2 undistort(const Vec2& raw) const;
  /// Inverse of undistort.
  Vec2 distort(const Vec2& pixel) const;

  bool contains(const Vec2& pixel, double margin = 0.0) const;
};

}  // namespace ctevo

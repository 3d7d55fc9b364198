// Feature trajectories exchanged between the frontend and the estimator.

#pragma once

#include "ctevo/lie.hpp"

#include <cstdint>
#include <vector>

namespace ctevo {

using FeatureId = std::int64_t;

/// One tracked pixel position of a feature.
struct Measurement {
  double t = 0.0;
  Vec2 q = Vec2::Zero();
};

enum class TrackStatus { kActive, kClosed };

/// Ordered spatio-temporal track of a single landmark. Measurement times are
/// strictly increasing. Values of this type crossing the frontend/estimator
/// queue are immutable snapshots.
struct FeatureTrajectory {
  FeatureId id = 0;
  std::vector<Measurement> measurements;
  double last_update = 0.0;
  TrackStatus status = TrackStatus::kActive;

  double front_time() const { return measurements.front().t; }
  double back_time() const { return measurements.back().t; }
};

}  // namespace ctevo

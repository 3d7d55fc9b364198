// Synthetic ground truth: analytic camera trajectories, landmark fields,
// noisy asynchronous feature tracks and event replays of moving corners.
//
// Everything is deterministic for a fixed seed.

#pragma once

#include "ctevo/camera.hpp"
#include "ctevo/features.hpp"
#include "ctevo/frontend.hpp"
#include "ctevo/gp_motion.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ctevo {

enum class TrajectoryKind { kLine, kCircle, kScrew, kGpSample };

TrajectoryKind parse_trajectory_kind(const std::string& name);
std::string to_string(TrajectoryKind kind);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kCircle;
  /// Circle, screw and GP sample: camera circles the origin in the z = 0
  /// plane, looking at the origin.
  double radius = 2.0;
  double revolutions_per_second = 0.5;
  /// Screw: climb speed along world z (m/s).
  double climb_rate = 0.2;
  /// Line: camera at `radius` on the world x axis looking at the origin,
  /// translating with this body-frame velocity (m/s).
  Vec3 line_velocity = Vec3(0.5, 0.0, 0.0);
  /// GP sample: acceleration noise used to perturb the circle twist.
  double gp_sigma_translation = 0.5;
  double gp_sigma_rotation = 0.3;
};

/// Continuous ground-truth trajectory. Line, circle and screw are exact
/// constant-twist motions T(t) = T0 exp(t varpi); the GP sample integrates a
/// velocity random walk on a 1 ms grid.
class SceneTrajectory {
 public:
  SceneTrajectory(const TrajectorySpec& spec, double duration, std::uint64_t seed);

  MotionState at(double t) const;
  double duration() const { return duration_; }

 private:
  TrajectoryKind kind_;
  double duration_;
  Pose start_;
  Twist twist_ = Twist::Zero();
  double grid_ = 1e-3;
  std::vector<MotionState> samples_;
};

struct SceneSpec {
  TrajectorySpec trajectory;
  double duration = 10.0;
  CameraModel camera{400.0, 400.0, 320.0, 240.0, 640, 480, {}};
  int landmark_count = 60;
  Vec3 box_min = Vec3::Constant(-1.0);
  Vec3 box_max = Vec3::Constant(1.0);
  /// Mean per-landmark measurement rate of the Poisson process (Hz).
  double rate_hz = 50.0;
  double pixel_sigma = 1.0;
  double min_depth = 0.1;
  double max_depth = 50.0;
  /// Measurements closer than this to the image border are dropped.
  double border_px = 2.0;
  /// A landmark's observations are split into tracks whose lifetimes are
  /// drawn uniformly from this range, mimicking trackers that lose and
  /// re-acquire features. A maximum of 0 keeps one track per visibility span.
  double track_lifetime_min = 0.3;
  double track_lifetime_max = 0.6;
  /// Landmarks whose observed bearings never spread by this much are excluded.
  double min_parallax_deg = 1.0;
  /// Ground-truth sampling rate (Hz).
  double groundtruth_rate_hz = 200.0;
};

struct SyntheticData {
  std::vector<MotionState> groundtruth;
  std::vector<Vec3> landmarks;
  /// Tracks ordered by first measurement time; ids are their indices.
  std::vector<FeatureTrajectory> tracks;
  /// Landmark index observed by each track.
  std::vector<int> track_landmark;
  /// Landmarks never observed long enough to form a track, or seen with too
  /// little parallax.
  std::vector<int> excluded;
  /// Seed that rebuilds the same SceneTrajectory.
  std::uint64_t seed = 0;
};

SyntheticData generate(const SceneSpec& scene, std::uint64_t seed);

/// Replays complete tracks the way the frontend forwards them: a snapshot
/// once a track reaches `forward_min` measurements, again after every growth
/// by `forward_step`, and a final closed snapshot. Snapshots are ordered by
/// the time of their newest measurement.
std::vector<FeatureTrajectory> snapshot_stream(const std::vector<FeatureTrajectory>& tracks,
                                               std::size_t forward_min = 8,
                                               std::size_t forward_step = 4);

/// An L-shaped corner translating at constant image velocity.
struct CornerPattern {
  Vec2 origin = Vec2(120.0, 90.0);
  Vec2 velocity = Vec2(20.0, 0.0);  // px/s
  int arm_length = 40;
  /// Arms point along +x and +y, rotated by quadrant * 90 degrees.
  int quadrant = 0;
  /// Events per second fired by every edge pixel.
  double pixel_rate = 200.0;
  /// Uniform background events per second over the whole sensor.
  double noise_rate = 0.0;
  double duration = 1.0;
  int width = 240;
  int height = 180;
  int polarity = 1;
};

/// Corner vertex position at time t.
Vec2 corner_position(const CornerPattern& pattern, double t);

/// Edge pixels of an L corner at an integer vertex.
std::vector<std::pair<int, int>> corner_pixels(int x, int y, int arm_length, int quadrant);

/// Event stream of a moving corner with per-pixel Poisson timing.
std::vector<Event> replay_corner(const CornerPattern& pattern, std::uint64_t seed);

struct EventRenderSpec {
  int arm_length = 6;
  double pixel_rate = 1000.0;
  double noise_rate = 0.0;
};

/// Renders every landmark of a scene as a small L corner at its projected
/// pixel, producing a sensor-like event stream for the full pipeline.
std::vector<Event> render_events(const SceneSpec& scene, const SyntheticData& data,
                                 const EventRenderSpec& render, std::uint64_t seed);

}  // namespace ctevo

#include "ctevo/simgen.hpp"

#include <algorithm>
#include <map>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace ctevo {

TrajectoryKind parse_trajectory_kind(const std::string& name) {
  if (name == "line") return TrajectoryKind::kLine;
  if (name == "circle") return TrajectoryKind::kCircle;
  if (name == "screw") return TrajectoryKind::kScrew;
  if (name == "gp") return TrajectoryKind::kGpSample;
  throw std::invalid_argument("unknown trajectory kind '" + name + "'");
}

std::string to_string(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kLine:
      return "line";
    case TrajectoryKind::kCircle:
      return "circle";
    case TrajectoryKind::kScrew:
      return "screw";
    case TrajectoryKind::kGpSample:
      return "gp";
  }
  return "circle";
}

// ---------------------------------------------------------------------------
// Trajectories

SceneTrajectory::SceneTrajectory(const TrajectorySpec& spec, double duration, std::uint64_t seed)
    : kind_(spec.kind), duration_(duration) {
  if (!(duration > 0.0)) throw std::invalid_argument("SceneTrajectory: duration must be positive");
  // start on the world x axis, optical axis towards the origin, image y down world z
  Mat3 r0;
  r0.col(0) = Vec3(0, 1, 0);
  r0.col(1) = Vec3(0, 0, -1);
  r0.col(2) = Vec3(-1, 0, 0);
  start_ = Pose(r0, Vec3(spec.radius, 0, 0));

  const double omega = 2.0 * std::numbers::pi * spec.revolutions_per_second;
  switch (kind_) {
    case TrajectoryKind::kLine:
      twist_ << spec.line_velocity, Vec3::Zero();
      break;
    case TrajectoryKind::kCircle:
    case TrajectoryKind::kGpSample:
      twist_ << spec.radius * omega, 0, 0, 0, -omega, 0;
      break;
    case TrajectoryKind::kScrew:
      // body y is world -z, and it is also the rotation axis
      twist_ << spec.radius * omega, -spec.climb_rate, 0, 0, -omega, 0;
      break;
  }

  if (kind_ == TrajectoryKind::kGpSample) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const auto steps = static_cast<std::size_t>(std::ceil(duration / grid_)) + 1;
    samples_.reserve(steps + 1);
    MotionState x{0.0, start_, twist_};
    const double sq = std::sqrt(grid_);
    for (std::size_t k = 0; k <= steps; ++k) {
      samples_.push_back(x);
      x.pose = x.pose * se3_exp(grid_ * x.velocity);
      x.t = static_cast<double>(k + 1) * grid_;
      for (int i = 0; i < 3; ++i) x.velocity(i) += sq * spec.gp_sigma_translation * n01(rng);
      for (int i = 3; i < 6; ++i) x.velocity(i) += sq * spec.gp_sigma_rotation * n01(rng);
    }
  }
}

MotionState SceneTrajectory::at(double t) const {
  if (kind_ != TrajectoryKind::kGpSample) return {t, start_ * se3_exp(t * twist_), twist_};
  const double clamped = std::clamp(t, 0.0, samples_.back().t);
  const auto k = std::min(static_cast<std::size_t>(clamped / grid_), samples_.size() - 1);
  const MotionState& s = samples_[k];
  return {t, s.pose * se3_exp((t - s.t) * s.velocity), s.velocity};
}

// ---------------------------------------------------------------------------
// Feature tracks

SyntheticData generate(const SceneSpec& scene, std::uint64_t seed) {
  if (scene.landmark_count < 0 || !(scene.rate_hz > 0.0) || !(scene.pixel_sigma >= 0.0) ||
      !scene.camera.is_valid()) {
    throw std::invalid_argument("generate: invalid scene");
  }
  SyntheticData out;
  out.seed = seed;
  const SceneTrajectory traj(scene.trajectory, scene.duration, seed);

  const auto gt_steps = static_cast<int>(std::floor(scene.duration * scene.groundtruth_rate_hz));
  for (int k = 0; k <= gt_steps; ++k) {
    out.groundtruth.push_back(traj.at(static_cast<double>(k) / scene.groundtruth_rate_hz));
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < scene.landmark_count; ++i) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p(a) = scene.box_min(a) + (scene.box_max(a) - scene.box_min(a)) * u01(rng);
    out.landmarks.push_back(p);
  }

  std::exponential_distribution<double> gap(scene.rate_hz);
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool split = scene.track_lifetime_max > 0.0;
  const auto lifetime = [&] {
    return scene.track_lifetime_min +
           (scene.track_lifetime_max - scene.track_lifetime_min) * u01(rng);
  };

  struct Pending {
    FeatureTrajectory track;
    int landmark;
  };
  std::vector<Pending> tracks;
  for (int i = 0; i < scene.landmark_count; ++i) {
    const Vec3& l = out.landmarks[i];
    std::size_t kept_before = tracks.size();
    FeatureTrajectory current;
    double deadline = 0.0;
    // widest angle between the first observed bearing and any later one
    std::optional<Vec3> first_ray;
    double parallax = 0.0;
    const auto flush = [&] {
      if (current.measurements.size() >= 2) tracks.push_back({current, i});
      current.measurements.clear();
    };
    for (double t = gap(rng); t <= scene.duration; t += gap(rng)) {
      const Pose pose = traj.at(t).pose;
      const Vec3 pc = pose.inverse() * l;
      const bool depth_ok = pc.z() > scene.min_depth && pc.z() < scene.max_depth;
      const Vec2 pixel = depth_ok ? scene.camera.project(pc) : Vec2::Zero();
      if (!depth_ok || !scene.camera.contains(pixel, scene.border_px)) {
        flush();
        continue;
      }
      if (current.measurements.empty()) {
        deadline = t + lifetime();
      } else if (split && t >= deadline) {
        flush();
        deadline = t + lifetime();
      }
      const Vec3 ray = (l - pose.translation()).normalized();
      if (!first_ray) first_ray = ray;
      parallax = std::max(parallax, std::atan2(first_ray->cross(ray).norm(), first_ray->dot(ray)));
      const Vec2 q = pixel + scene.pixel_sigma * Vec2(noise(rng), noise(rng));
      current.measurements.push_back({t, q});
    }
    flush();
    if (parallax * 180.0 / std::numbers::pi <= scene.min_parallax_deg) tracks.resize(kept_before);
    if (tracks.size() == kept_before) out.excluded.push_back(i);
  }
  if (!out.excluded.empty()) {
    spdlog::info("generate: {} of {} landmarks excluded (not visible long enough or too little parallax)",
                 out.excluded.size(), scene.landmark_count);
  }

  std::stable_sort(tracks.begin(), tracks.end(), [](const Pending& a, const Pending& b) {
    return a.track.front_time() < b.track.front_time();
  });
  for (std::size_t k = 0; k < tracks.size(); ++k) {
    FeatureTrajectory f = std::move(tracks[k].track);
    f.id = static_cast<FeatureId>(k);
    f.last_update = f.back_time();
    f.status = TrackStatus::kClosed;
    out.tracks.push_back(std::move(f));
    out.track_landmark.push_back(tracks[k].landmark);
  }
  return out;
}

std::vector<FeatureTrajectory> snapshot_stream(const std::vector<FeatureTrajectory>& tracks,
                                               std::size_t forward_min, std::size_t forward_step) {
  struct Keyed {
    double t;
    FeatureId id;
    std::size_t n;
  };
  std::vector<Keyed> keys;
  std::map<FeatureId, const FeatureTrajectory*> by_id;
  for (const auto& f : tracks) {
    by_id[f.id] = &f;
    const std::size_t total = f.measurements.size();
    if (total < forward_min) continue;
    std::size_t n = forward_min;
    std::size_t last = 0;
    for (; n <= total; n += forward_step) {
      keys.push_back({f.measurements[n - 1].t, f.id, n});
      last = n;
    }
    if (last < total) keys.push_back({f.back_time(), f.id, total});
  }
  std::stable_sort(keys.begin(), keys.end(), [](const Keyed& a, const Keyed& b) {
    if (a.t != b.t) return a.t < b.t;
    return a.id < b.id;
  });
  std::vector<FeatureTrajectory> out;
  out.reserve(keys.size());
  for (const auto& k : keys) {
    const FeatureTrajectory& f = *by_id.at(k.id);
    FeatureTrajectory s;
    s.id = f.id;
    s.measurements.assign(f.measurements.begin(), f.measurements.begin() + k.n);
    s.last_update = s.back_time();
    s.status = k.n == f.measurements.size() ? TrackStatus::kClosed : TrackStatus::kActive;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Event replays

Vec2 corner_position(const CornerPattern& pattern, double t) {
  return pattern.origin + t * pattern.velocity;
}

std::vector<std::pair<int, int>> corner_pixels(int x, int y, int arm_length, int quadrant) {
  std::vector<std::pair<int, int>> px;
  const auto rotate = [quadrant](int dx, int dy) {
    for (int q = 0; q < ((quadrant % 4) + 4) % 4; ++q) {
      const int t = dx;
      dx = -dy;
      dy = t;
    }
    return std::make_pair(dx, dy);
  };
  for (int i = 0; i < arm_length; ++i) {
    const auto [dx, dy] = rotate(i, 0);
    px.emplace_back(x + dx, y + dy);
  }
  for (int i = 1; i < arm_length; ++i) {
    const auto [dx, dy] = rotate(0, i);
    px.emplace_back(x + dx, y + dy);
  }
  return px;
}

namespace {

constexpr double kReplayStep = 1e-3;

// Fires Poisson events on `pixels` over [t0, t0 + step).
void fire(const std::vector<std::pair<int, int>>& pixels, double t0, double rate, int polarity,
          int width, int height, std::mt19937_64& rng, std::vector<Event>* out) {
  std::poisson_distribution<int> count(rate * kReplayStep);
  std::uniform_real_distribution<double> when(t0, t0 + kReplayStep);
  for (const auto& [x, y] : pixels) {
    const int k = count(rng);
    if (x < 0 || y < 0 || x >= width || y >= height) continue;
    for (int i = 0; i < k; ++i) out->push_back({when(rng), x, y, polarity});
  }
}

void background(double t0, double rate, int width, int height, std::mt19937_64& rng,
                std::vector<Event>* out) {
  if (rate <= 0.0) return;
  std::poisson_distribution<int> count(rate * kReplayStep);
  std::uniform_real_distribution<double> when(t0, t0 + kReplayStep);
  std::uniform_int_distribution<int> ux(0, width - 1);
  std::uniform_int_distribution<int> uy(0, height - 1);
  std::bernoulli_distribution pol(0.5);
  const int k = count(rng);
  for (int i = 0; i < k; ++i) out->push_back({when(rng), ux(rng), uy(rng), pol(rng) ? 1 : -1});
}

void sort_step(std::vector<Event>* events, std::size_t from) {
  std::stable_sort(events->begin() + static_cast<std::ptrdiff_t>(from), events->end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

}  // namespace

std::vector<Event> replay_corner(const CornerPattern& pattern, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Event> events;
  const auto steps = static_cast<int>(std::ceil(pattern.duration / kReplayStep));
  for (int s = 0; s < steps; ++s) {
    const double t0 = s * kReplayStep;
    const Vec2 c = corner_position(pattern, t0 + 0.5 * kReplayStep);
    const auto pixels = corner_pixels(static_cast<int>(std::lround(c.x())),
                                      static_cast<int>(std::lround(c.y())), pattern.arm_length,
                                      pattern.quadrant);
    const std::size_t from = events.size();
    fire(pixels, t0, pattern.pixel_rate, pattern.polarity, pattern.width, pattern.height, rng,
         &events);
    background(t0, pattern.noise_rate, pattern.width, pattern.height, rng, &events);
    sort_step(&events, from);
  }
  return events;
}

std::vector<Event> render_events(const SceneSpec& scene, const SyntheticData& data,
                                 const EventRenderSpec& render, std::uint64_t seed) {
  const SceneTrajectory traj(scene.trajectory, scene.duration, data.seed);
  const CameraModel& cam = scene.camera;
  std::mt19937_64 rng(seed);
  std::vector<Event> events;
  const auto steps = static_cast<int>(std::ceil(scene.duration / kReplayStep));
  const double margin = render.arm_length + 1.0;
  for (int s = 0; s < steps; ++s) {
    const double t0 = s * kReplayStep;
    const Pose world_to_cam = traj.at(t0 + 0.5 * kReplayStep).pose.inverse();
    const std::size_t from = events.size();
    for (std::size_t i = 0; i < data.landmarks.size(); ++i) {
      const Vec3 pc = world_to_cam * data.landmarks[i];
      if (pc.z() <= scene.min_depth || pc.z() >= scene.max_depth) continue;
      const Vec2 pixel = cam.distort(cam.project(pc));
      if (!cam.contains(pixel, margin)) continue;
      const auto pixels = corner_pixels(static_cast<int>(std::lround(pixel.x())),
                                        static_cast<int>(std::lround(pixel.y())),
                                        render.arm_length, static_cast<int>(i % 4));
      fire(pixels, t0, render.pixel_rate, i % 2 == 0 ? 1 : -1, cam.width, cam.height, rng,
           &events);
    }
    background(t0, render.noise_rate, cam.width, cam.height, rng, &events);
    sort_step(&events, from);
  }
  return events;
}

}  // namespace ctevo

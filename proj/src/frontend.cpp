#include "ctevo/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctevo {

// ---------------------------------------------------------------------------
// SAE

SurfaceOfActiveEvents::SurfaceOfActiveEvents(int width, int height)
    : width_(width),
      height_(height),
      pos_(static_cast<std::size_t>(width) * height, -std::numeric_limits<double>::infinity()),
      neg_(static_cast<std::size_t>(width) * height, -std::numeric_limits<double>::infinity()) {}

void SurfaceOfActiveEvents::update(const Event& e) {
  (e.polarity > 0 ? pos_ : neg_)[index(e.x, e.y)] = e.t;
  latest_ = std::max(latest_, e.t);
}

std::vector<std::uint8_t> SurfaceOfActiveEvents::binarize(int x, int y, int radius, int polarity,
                                                          int newest) const {
  const int side = 2 * radius + 1;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(side) * side, 0);
  std::vector<double> stamps;
  stamps.reserve(mask.size());
  const auto& p = plane(polarity);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = x + dx;
      const int py = y + dy;
      if (px < 0 || py < 0 || px >= width_ || py >= height_) continue;
      const double t = p[index(px, py)];
      if (std::isfinite(t)) stamps.push_back(t);
    }
  }
  if (stamps.empty() || newest <= 0) return mask;
  double threshold = -std::numeric_limits<double>::infinity();
  if (static_cast<int>(stamps.size()) > newest) {
    std::nth_element(stamps.begin(), stamps.begin() + (newest - 1), stamps.end(),
                     std::greater<double>());
    threshold = stamps[newest - 1];
  }
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = x + dx;
      const int py = y + dy;
      if (px < 0 || py < 0 || px >= width_ || py >= height_) continue;
      const double t = p[index(px, py)];
      if (std::isfinite(t) && t >= threshold) {
        mask[static_cast<std::size_t>(dy + radius) * side + (dx + radius)] = 1;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Registration table

RegistrationTable::RegistrationTable(int width, int height)
    : width_(width), height_(height), cells_(static_cast<std::size_t>(width) * height, kEmpty) {}

std::optional<FeatureId> RegistrationTable::get(int x, int y) {
  ++accesses_;
  const FeatureId id = cells_[static_cast<std::size_t>(y) * width_ + x];
  if (id == kEmpty) return std::nullopt;
  return id;
}

std::optional<FeatureId> RegistrationTable::peek(int x, int y) const {
  const FeatureId id = cells_[static_cast<std::size_t>(y) * width_ + x];
  if (id == kEmpty) return std::nullopt;
  return id;
}

void RegistrationTable::set(int x, int y, FeatureId id) {
  ++accesses_;
  cells_[static_cast<std::size_t>(y) * width_ + x] = id;
}

void RegistrationTable::clear(int x, int y) {
  ++accesses_;
  cells_[static_cast<std::size_t>(y) * width_ + x] = kEmpty;
}

std::optional<FeatureId> RegistrationTable::find_near(int x, int y, int radius,
                                                      std::optional<FeatureId> ignore) {
  std::optional<FeatureId> best;
  int best_d2 = std::numeric_limits<int>::max();
  for (int dy = -radius; dy <= radius; ++dy) {
    const int py = y + dy;
    if (py < 0 || py >= height_) continue;
    for (int dx = -radius; dx <= radius; ++dx) {
      const int px = x + dx;
      if (px < 0 || px >= width_) continue;
      const auto id = get(px, py);
      if (!id || (ignore && *id == *ignore)) continue;
      const int d2 = dx * dx + dy * dy;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = id;
      }
    }
  }
  return best;
}

std::size_t RegistrationTable::occupied() const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [](FeatureId c) { return c != kEmpty; }));
}

// ---------------------------------------------------------------------------
// Detection

double harris_score(const std::vector<std::uint8_t>& mask, int radius, double k) {
  const int side = 2 * radius + 1;
  const auto m = [&](int r, int c) { return static_cast<double>(mask[r * side + c]); };
  // Gaussian window centred on the patch, sigma = radius / 2
  const double inv_two_sigma2 = 2.0 / (radius * radius);
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (int r = 1; r < side - 1; ++r) {
    for (int c = 1; c < side - 1; ++c) {
      const double gx = (m(r - 1, c + 1) + 2.0 * m(r, c + 1) + m(r + 1, c + 1)) -
                        (m(r - 1, c - 1) + 2.0 * m(r, c - 1) + m(r + 1, c - 1));
      const double gy = (m(r + 1, c - 1) + 2.0 * m(r + 1, c) + m(r + 1, c + 1)) -
                        (m(r - 1, c - 1) + 2.0 * m(r - 1, c) + m(r - 1, c + 1));
      const int dr = r - radius;
      const int dc = c - radius;
      const double w = std::exp(-(dr * dr + dc * dc) * inv_two_sigma2);
      sxx += w * gx * gx;
      syy += w * gy * gy;
      sxy += w * gx * gy;
    }
  }
  const double det = sxx * syy - sxy * sxy;
  const double trace = sxx + syy;
  return det - k * trace * trace;
}

namespace {

bool interior(const SurfaceOfActiveEvents& sae, int x, int y, int r) {
  return x >= r && y >= r && x < sae.width() - r && y < sae.height() - r;
}

double score_at(const SurfaceOfActiveEvents& sae, int x, int y, int polarity,
                const FrontendConfig& config) {
  const int r = config.detector_radius;
  return harris_score(sae.binarize(x, y, r, polarity, config.detector_newest_count()), r,
                      config.harris_k);
}

}  // namespace

bool detect_corner(const SurfaceOfActiveEvents& sae, int x, int y, int polarity,
                   const FrontendConfig& config) {
  const int r = config.detector_radius;
  if (!interior(sae, x, y, r)) return false;
  const auto mask = sae.binarize(x, y, r, polarity, config.detector_newest_count());
  const double score = harris_score(mask, r, config.harris_k);
  if (score <= config.harris_threshold) return false;
  // keep only local maxima among the active neighbours
  const int side = 2 * r + 1;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if ((dx == 0 && dy == 0) || !mask[(r + dy) * side + (r + dx)]) continue;
      if (!interior(sae, x + dx, y + dy, r)) continue;
      if (score_at(sae, x + dx, y + dy, polarity, config) > score) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tracker

PatchTracker::PatchTracker(std::vector<std::uint8_t> templ, int radius, int x, int y,
                           const FrontendConfig& config)
    : template_(std::move(templ)),
      radius_(radius),
      x_(x),
      y_(y),
      min_events_(config.tracker_min_events),
      margin_(config.tracker_margin),
      floor_(config.tracker_floor) {
  const int side = 2 * radius + 1;
  if (template_.size() != static_cast<std::size_t>(side) * side) {
    throw std::invalid_argument("PatchTracker: template size does not match radius");
  }
}

bool PatchTracker::template_at(int dx, int dy) const {
  if (std::abs(dx) > radius_ || std::abs(dy) > radius_) return false;
  const int side = 2 * radius_ + 1;
  return template_[static_cast<std::size_t>(dy + radius_) * side + (dx + radius_)] != 0;
}

void PatchTracker::reset() {
  scores_.fill(0.0);
  count_ = 0;
}

PatchTracker::Result PatchTracker::process(int x, int y) {
  const int dx = x - x_;
  const int dy = y - y_;
  for (std::size_t h = 0; h < kShifts.size(); ++h) {
    if (template_at(dx - kShifts[h][0], dy - kShifts[h][1])) scores_[h] += 1.0;
  }
  ++count_;
  if (count_ < min_events_) return {};

  std::size_t best = 0;
  for (std::size_t h = 1; h < kShifts.size(); ++h) {
    if (scores_[h] > scores_[best]) best = h;
  }
  double second = -1.0;
  for (std::size_t h = 0; h < kShifts.size(); ++h) {
    if (h != best) second = std::max(second, scores_[h]);
  }
  const int side = 2 * radius_ + 1;
  if (scores_[best] - second < margin_) {
    // no hypothesis explains the events after a full patch worth of votes
    if (count_ >= side * side) {
      reset();
      return {Outcome::kDiverged, 0, 0};
    }
    return {};
  }
  const double rate = scores_[best] / count_;
  reset();
  if (rate < floor_) return {Outcome::kDiverged, 0, 0};
  if (best == 0) return {Outcome::kStay, 0, 0};
  x_ += kShifts[best][0];
  y_ += kShifts[best][1];
  return {Outcome::kShift, kShifts[best][0], kShifts[best][1]};
}

// ---------------------------------------------------------------------------
// Frontend

Frontend::Frontend(FrontendConfig config)
    : config_(config),
      sae_(config.width, config.height),
      table_(config.width, config.height) {}

std::vector<FrontendEmission> Frontend::ingest(const Event& e) {
  std::vector<FrontendEmission> out;
  if (e.x < 0 || e.y < 0 || e.x >= config_.width || e.y >= config_.height || e.t < last_time_ ||
      !std::isfinite(e.t)) {
    ++rejected_;
    return out;
  }
  last_time_ = e.t;

  if (e.t - last_prune_ >= config_.prune_period) {
    last_prune_ = e.t;
    for (FeatureId id : prune(e.t)) out.push_back({FrontendEmission::Kind::kClosed, id});
  }

  const auto owner = table_.find_near(e.x, e.y, config_.registration_radius);
  if (owner) {
    auto& feature = active_.at(*owner);
    const PatchTracker::Result result = feature.tracker.process(e.x, e.y);
    auto& traj = trajectories_.at(*owner);
    switch (result.outcome) {
      case PatchTracker::Outcome::kPending:
        break;
      case PatchTracker::Outcome::kDiverged:
        close(*owner, &out);
        break;
      case PatchTracker::Outcome::kStay:
        traj.last_update = e.t;
        break;
      case PatchTracker::Outcome::kShift: {
        const int nx = feature.tracker.x();
        const int ny = feature.tracker.y();
        const int border = config_.tracker_radius;
        table_.clear(feature.cell_x, feature.cell_y);
        feature.cell_x = feature.cell_y = -1;
        const bool outside = nx < border || ny < border || nx >= config_.width - border ||
                             ny >= config_.height - border;
        // leaving the image or running into another feature ends the track
        if (outside || table_.find_near(nx, ny, config_.registration_radius, *owner)) {
          close(*owner, &out);
          break;
        }
        table_.set(nx, ny, *owner);
        feature.cell_x = nx;
        feature.cell_y = ny;
        traj.last_update = e.t;
        if (traj.measurements.empty() || e.t - traj.measurements.back().t >= config_.t_min) {
          traj.measurements.push_back({e.t, Vec2(nx, ny)});
          out.push_back({FrontendEmission::Kind::kUpdated, *owner});
          queue_if_due(*owner, false);
        }
        break;
      }
    }
    return out;
  }

  sae_.update(e);
  if (detect_corner(sae_, e.x, e.y, e.polarity, config_)) create_feature(e, &out);
  return out;
}

void Frontend::create_feature(const Event& e, std::vector<FrontendEmission>* out) {
  const int r = config_.tracker_radius;
  if (e.x < r || e.y < r || e.x >= config_.width - r || e.y >= config_.height - r) return;
  if (config_.suppression_radius > config_.registration_radius &&
      table_.find_near(e.x, e.y, config_.suppression_radius)) {
    return;
  }
  auto templ = sae_.binarize(e.x, e.y, r, e.polarity, config_.template_newest_count());
  const FeatureId id = next_id_++;
  active_.emplace(id, Feature{PatchTracker(std::move(templ), r, e.x, e.y, config_), e.x, e.y, 0});
  FeatureTrajectory traj;
  traj.id = id;
  traj.last_update = e.t;
  traj.measurements.push_back({e.t, Vec2(e.x, e.y)});
  trajectories_.emplace(id, std::move(traj));
  table_.set(e.x, e.y, id);
  out->push_back({FrontendEmission::Kind::kCreated, id});
}

PatchTracker::Result Frontend::track(FeatureId id, const Event& e) {
  return active_.at(id).tracker.process(e.x, e.y);
}

void Frontend::close(FeatureId id, std::vector<FrontendEmission>* out) {
  auto it = active_.find(id);
  if (it == active_.end()) return;
  if (it->second.cell_x >= 0) table_.clear(it->second.cell_x, it->second.cell_y);
  trajectories_.at(id).status = TrackStatus::kClosed;
  queue_if_due(id, true);
  active_.erase(it);
  if (out) out->push_back({FrontendEmission::Kind::kClosed, id});
}

void Frontend::queue_if_due(FeatureId id, bool closing) {
  const auto& traj = trajectories_.at(id);
  auto& feature = active_.at(id);
  const std::size_t n = traj.measurements.size();
  if (n < config_.forward_min) return;
  const bool first = feature.forwarded == 0;
  const bool grown = n >= feature.forwarded + config_.forward_step;
  const bool final_growth = closing && n > feature.forwarded;
  if (first || grown || final_growth) {
    ready_.push_back(traj);
    feature.forwarded = n;
  }
}

std::vector<FeatureId> Frontend::prune(double now) {
  std::vector<FeatureId> stale;
  for (const auto& [id, feature] : active_) {
    if (now - trajectories_.at(id).last_update > config_.t_max) stale.push_back(id);
  }
  const std::uint64_t before = table_.accesses();
  for (FeatureId id : stale) close(id, nullptr);
  prune_accesses_ += table_.accesses() - before;
  return stale;
}

std::vector<FeatureId> Frontend::close_all() {
  std::vector<FeatureId> ids = active_ids();
  const std::uint64_t before = table_.accesses();
  for (FeatureId id : ids) close(id, nullptr);
  prune_accesses_ += table_.accesses() - before;
  return ids;
}

std::vector<FeatureTrajectory> Frontend::take_ready() {
  std::vector<FeatureTrajectory> out;
  out.swap(ready_);
  return out;
}

const FeatureTrajectory& Frontend::trajectory(FeatureId id) const { return trajectories_.at(id); }

std::optional<std::pair<int, int>> Frontend::position(FeatureId id) const {
  auto it = active_.find(id);
  if (it == active_.end()) return std::nullopt;
  return std::make_pair(it->second.tracker.x(), it->second.tracker.y());
}

std::vector<FeatureId> Frontend::active_ids() const {
  std::vector<FeatureId> ids;
  ids.reserve(active_.size());
  for (const auto& [id, feature] : active_) ids.push_back(id);
  return ids;
}

}  // namespace ctevo

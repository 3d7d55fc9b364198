// Event-by-event feature detection and tracking.
//
// Every incoming event first looks up its neighbourhood in the registration
// table. Events near an active feature go to that feature's tracker; all other
// events update the surface of active events (SAE) and may spawn a new feature
// through a Harris test on the binarised SAE patch.

#pragma once

#include "ctevo/features.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

namespace ctevo {

struct Event {
  double t = 0.0;
  int x = 0;
  int y = 0;
  int polarity = 1;  // +1 or -1
};

struct FrontendConfig {
  int width = 240;
  int height = 180;
  int registration_radius = 3;
  int tracker_radius = 7;
  int detector_radius = 4;
  /// Newest SAE pixels kept when binarising the detector patch; 0 means 2(2w+1).
  int detector_newest = 0;
  /// Newest SAE pixels kept when building a tracker template; 0 means 2(2w+1).
  int template_newest = 0;
  double harris_k = 0.04;
  double harris_threshold = 2000.0;
  /// No new feature closer than this to an active one (px).
  int suppression_radius = 6;
  double t_min = 1e-3;
  double t_max = 0.1;
  double prune_period = 0.01;
  /// Tracker: events needed before any decision, winning margin, and the
  /// minimum hit rate of the winning hypothesis.
  int tracker_min_events = 4;
  double tracker_margin = 5.0;
  double tracker_floor = 0.5;
  /// Forward a trajectory once it holds this many measurements...
  std::size_t forward_min = 8;
  /// ...and again after every growth by this many.
  std::size_t forward_step = 4;

  int detector_newest_count() const {
    return detector_newest > 0 ? detector_newest : 2 * (2 * detector_radius + 1);
  }
  int template_newest_count() const {
    return template_newest > 0 ? template_newest : 2 * (2 * tracker_radius + 1);
  }
};

/// Per-pixel, per-polarity timestamp of the latest event.
class SurfaceOfActiveEvents {
 public:
  SurfaceOfActiveEvents(int width, int height);

  void update(const Event& e);
  double at(int x, int y, int polarity) const { return plane(polarity)[index(x, y)]; }
  int width() const { return width_; }
  int height() const { return height_; }
  double latest() const { return latest_; }

  /// Binary (2r+1)^2 mask around (x, y) keeping the `newest` most recent
  /// timestamps of one polarity plane. Pixels that never fired are 0.
  std::vector<std::uint8_t> binarize(int x, int y, int radius, int polarity, int newest) const;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + static_cast<std::size_t>(x);
  }
  const std::vector<double>& plane(int polarity) const { return polarity > 0 ? pos_ : neg_; }

  int width_;
  int height_;
  std::vector<double> pos_;
  std::vector<double> neg_;
  double latest_ = -std::numeric_limits<double>::infinity();
};

/// Image-sized grid mapping pixels to active feature ids. Every cell read or
/// write is counted.
class RegistrationTable {
 public:
  RegistrationTable(int width, int height);

  std::optional<FeatureId> get(int x, int y);
  /// Uncounted read for diagnostics.
  std::optional<FeatureId> peek(int x, int y) const;
  void set(int x, int y, FeatureId id);
  void clear(int x, int y);
  /// Nearest active id in the (2r+1)^2 patch around (x, y), ties broken by
  /// scan order. Cells outside the image are skipped.
  std::optional<FeatureId> find_near(int x, int y, int radius, std::optional<FeatureId> ignore = {});

  std::uint64_t accesses() const { return accesses_; }
  std::size_t occupied() const;
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  static constexpr FeatureId kEmpty = -1;
  int width_;
  int height_;
  std::vector<FeatureId> cells_;
  std::uint64_t accesses_ = 0;
};

/// Harris response of a binary (2r+1)^2 mask: Sobel gradients, structure
/// tensor accumulated under a Gaussian window of sigma r/2.
double harris_score(const std::vector<std::uint8_t>& mask, int radius, double k);

/// Harris corner test at (x, y) on the plane of `polarity`: score above the
/// threshold and no higher score at an active 8-neighbour. Border pixels are
/// never corners.
bool detect_corner(const SurfaceOfActiveEvents& sae, int x, int y, int polarity,
                   const FrontendConfig& config);

/// Binary-template tracker with five hypotheses (stay, +-x, +-y).
class PatchTracker {
 public:
  enum class Outcome { kPending, kStay, kShift, kDiverged };

  struct Result {
    Outcome outcome = Outcome::kPending;
    int dx = 0;
    int dy = 0;
  };

  PatchTracker(std::vector<std::uint8_t> templ, int radius, int x, int y,
               const FrontendConfig& config);

  /// Votes with an event at pixel (x, y).
  Result process(int x, int y);

  int x() const { return x_; }
  int y() const { return y_; }
  int radius() const { return radius_; }

 private:
  static constexpr std::array<std::array<int, 2>, 5> kShifts{
      {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}};

  bool template_at(int dx, int dy) const;
  void reset();

  std::vector<std::uint8_t> template_;
  int radius_;
  int x_;
  int y_;
  int min_events_;
  double margin_;
  double floor_;
  std::array<double, 5> scores_{};
  int count_ = 0;
};

/// What happened to a feature while ingesting one event.
struct FrontendEmission {
  enum class Kind { kCreated, kUpdated, kClosed };
  Kind kind;
  FeatureId id;
};

class Frontend {
 public:
  explicit Frontend(FrontendConfig config);

  /// Processes one event in stream order. Out-of-bounds or out-of-order events
  /// are rejected and counted.
  std::vector<FrontendEmission> ingest(const Event& e);

  /// Closes features idle for more than t_max at `now`.
  std::vector<FeatureId> prune(double now);

  /// Closes every active feature (end of stream).
  std::vector<FeatureId> close_all();

  /// Snapshots due for the estimator, in the order they became due.
  std::vector<FeatureTrajectory> take_ready();

  const FeatureTrajectory& trajectory(FeatureId id) const;
  std::optional<std::pair<int, int>> position(FeatureId id) const;
  std::vector<FeatureId> active_ids() const;
  std::size_t active_count() const { return active_.size(); }

  const RegistrationTable& table() const { return table_; }
  const SurfaceOfActiveEvents& sae() const { return sae_; }
  /// Table cell accesses made while routing/creating/moving features.
  std::uint64_t event_cell_accesses() const { return table_.accesses() - prune_accesses_; }
  std::uint64_t rejected_events() const { return rejected_; }
  const FrontendConfig& config() const { return config_; }

  /// Direct tracker access, mainly for tests.
  PatchTracker::Result track(FeatureId id, const Event& e);

 private:
  struct Feature {
    PatchTracker tracker;
    int cell_x = -1;  // registered table cell, -1 once released
    int cell_y = -1;
    std::size_t forwarded = 0;
  };

  void close(FeatureId id, std::vector<FrontendEmission>* out);
  void queue_if_due(FeatureId id, bool closing);
  void create_feature(const Event& e, std::vector<FrontendEmission>* out);

  FrontendConfig config_;
  SurfaceOfActiveEvents sae_;
  RegistrationTable table_;
  std::map<FeatureId, Feature> active_;
  std::map<FeatureId, FeatureTrajectory> trajectories_;
  std::vector<FeatureTrajectory> ready_;
  FeatureId next_id_ = 0;
  double last_time_ = -std::numeric_limits<double>::infinity();
  double last_prune_ = -std::numeric_limits<double>::infinity();
  std::uint64_t rejected_ = 0;
  std::uint64_t prune_accesses_ = 0;
};

}  // namespace ctevo

#include "ctevo/frontend.hpp"
#include "ctevo/simgen.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace ctevo {
namespace {

using Kind = FrontendEmission::Kind;

std::vector<std::uint8_t> l_mask(int radius) {
  const int side = 2 * radius + 1;
  std::vector<std::uint8_t> m(side * side, 0);
  for (int i = radius; i < side; ++i) {
    m[radius * side + i] = 1;
    m[i * side + radius] = 1;
  }
  return m;
}

// Fires every pixel of `pixels` once, spaced by 10 us starting at t.
double fire(SurfaceOfActiveEvents* sae, const std::vector<std::pair<int, int>>& pixels, double t) {
  for (const auto& [x, y] : pixels) {
    sae->update({t, x, y, 1});
    t += 1e-5;
  }
  return t;
}

// Static corner events until the frontend creates a feature there.
FeatureId spawn(Frontend* fe, int x, int y, double* t, std::mt19937_64* rng) {
  const auto pixels = corner_pixels(x, y, 40, 0);
  std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
  for (int i = 0; i < 20000; ++i) {
    const auto [px, py] = pixels[pick(*rng)];
    *t += 2e-5;
    for (const auto& em : fe->ingest({*t, px, py, 1})) {
      if (em.kind == Kind::kCreated) return em.id;
    }
  }
  ADD_FAILURE() << "no feature created at " << x << "," << y;
  return -1;
}

// Replays template pixels at (x, y) for the feature so its tracker keeps
// deciding "stay".
void refresh(Frontend* fe, FeatureId id, double* t, std::mt19937_64* rng) {
  const auto pos = fe->position(id);
  ASSERT_TRUE(pos);
  const auto pixels = corner_pixels(pos->first, pos->second, 3, 0);
  std::uniform_int_distribution<std::size_t> pick(0, pixels.size() - 1);
  for (int i = 0; i < 40; ++i) {
    const auto [px, py] = pixels[pick(*rng)];
    *t += 1e-5;
    fe->ingest({*t, px, py, 1});
  }
}

// ---------------------------------------------------------------------------
// SAE and detection

TEST(Frontend, EventOnEmptyTableWithoutCornerOnlyUpdatesSae) {
  Frontend fe({});
  const auto out = fe.ingest({0.5, 100, 50, -1});
  EXPECT_TRUE(out.empty());
  EXPECT_EQ(fe.sae().at(100, 50, -1), 0.5);
  EXPECT_FALSE(std::isfinite(fe.sae().at(100, 50, 1)));
  EXPECT_EQ(fe.active_count(), 0u);
  EXPECT_EQ(fe.table().occupied(), 0u);
}

TEST(Frontend, RejectsOutOfBoundsAndOutOfOrderEvents) {
  Frontend fe({});
  fe.ingest({1.0, -1, 0, 1});
  fe.ingest({1.0, 240, 0, 1});
  fe.ingest({1.0, 0, 180, 1});
  fe.ingest({1.0, 10, 10, 1});
  fe.ingest({0.9, 10, 10, 1});
  EXPECT_EQ(fe.rejected_events(), 4u);
}

TEST(Detect, HarrisScoresSeparateCornersFromEdges) {
  const FrontendConfig config;
  const int r = config.detector_radius;
  const int side = 2 * r + 1;
  EXPECT_GT(harris_score(l_mask(r), r, config.harris_k), config.harris_threshold);

  std::vector<std::uint8_t> edge(side * side, 0);
  for (int i = 0; i < side; ++i) edge[r * side + i] = 1;
  EXPECT_LT(harris_score(edge, r, config.harris_k), 0.0);

  std::vector<std::uint8_t> uniform(side * side, 1);
  EXPECT_EQ(harris_score(uniform, r, config.harris_k), 0.0);
}

TEST(Detect, UniformPatchIsNotACorner) {
  const FrontendConfig config;
  SurfaceOfActiveEvents sae(config.width, config.height);
  // every pixel shares the same timestamp, so the binarised mask is full
  for (int y = 40; y < 80; ++y) {
    for (int x = 40; x < 80; ++x) sae.update({1.0, x, y, 1});
  }
  for (int y = 50; y < 70; ++y) {
    for (int x = 50; x < 70; ++x) EXPECT_FALSE(detect_corner(sae, x, y, 1, config));
  }
}

TEST(Detect, LShapedMaskIsACorner) {
  const FrontendConfig config;
  SurfaceOfActiveEvents sae(config.width, config.height);
  const auto pixels = corner_pixels(100, 80, 20, 0);
  fire(&sae, pixels, 1.0);
  bool found = false;
  for (int d = 0; d <= 2; ++d) {
    found = found || detect_corner(sae, 100 + d, 80, 1, config) ||
            detect_corner(sae, 100, 80 + d, 1, config);
  }
  EXPECT_TRUE(found);
  // the opposite polarity plane is empty
  EXPECT_FALSE(detect_corner(sae, 100, 80, -1, config));
}

TEST(Detect, StraightEdgeIsNotACorner) {
  const FrontendConfig config;
  SurfaceOfActiveEvents sae(config.width, config.height);
  std::vector<std::pair<int, int>> edge;
  for (int x = 20; x < 220; ++x) edge.emplace_back(x, 90);
  fire(&sae, edge, 1.0);
  for (int x = 30; x < 210; ++x) EXPECT_FALSE(detect_corner(sae, x, 90, 1, config)) << x;
}

TEST(Detect, BorderPixelsAreNeverCorners) {
  const FrontendConfig config;
  SurfaceOfActiveEvents sae(config.width, config.height);
  fire(&sae, corner_pixels(2, 2, 10, 0), 1.0);
  for (int d = 0; d < config.detector_radius; ++d) {
    EXPECT_FALSE(detect_corner(sae, d, 2, 1, config));
    EXPECT_FALSE(detect_corner(sae, 2, d, 1, config));
  }
}

// ---------------------------------------------------------------------------
// Tracker

class TrackerTest : public ::testing::Test {
 protected:
  static constexpr int kRadius = 7;
  static constexpr int kArea = (2 * kRadius + 1) * (2 * kRadius + 1);

  std::vector<std::pair<int, int>> template_pixels(int dx, int dy) const {
    const int side = 2 * kRadius + 1;
    std::vector<std::pair<int, int>> px;
    const auto m = l_mask(kRadius);
    for (int r = 0; r < side; ++r) {
      for (int c = 0; c < side; ++c) {
        const int x = c - kRadius + dx;
        const int y = r - kRadius + dy;
        if (m[r * side + c] && std::abs(x) <= kRadius && std::abs(y) <= kRadius) {
          px.emplace_back(kX + x, kY + y);
        }
      }
    }
    return px;
  }

  PatchTracker make() const { return PatchTracker(l_mask(kRadius), kRadius, kX, kY, config_); }

  static constexpr int kX = 50;
  static constexpr int kY = 60;
  FrontendConfig config_;
  std::mt19937_64 rng_{42};
};

TEST_F(TrackerTest, ReplayedTemplateStays) {
  PatchTracker tracker = make();
  const auto px = template_pixels(0, 0);
  std::uniform_int_distribution<std::size_t> pick(0, px.size() - 1);
  int stays = 0;
  for (int i = 0; i < 2 * kArea; ++i) {
    const auto [x, y] = px[pick(rng_)];
    const auto res = tracker.process(x, y);
    EXPECT_NE(res.outcome, PatchTracker::Outcome::kShift);
    EXPECT_NE(res.outcome, PatchTracker::Outcome::kDiverged);
    stays += res.outcome == PatchTracker::Outcome::kStay;
  }
  EXPECT_GT(stays, 0);
  EXPECT_EQ(tracker.x(), kX);
  EXPECT_EQ(tracker.y(), kY);
}

TEST_F(TrackerTest, ShiftedTemplateWinsPlusX) {
  for (int trial = 0; trial < 20; ++trial) {
    PatchTracker tracker = make();
    const auto px = template_pixels(1, 0);
    std::uniform_int_distribution<std::size_t> pick(0, px.size() - 1);
    int used = 0;
    PatchTracker::Result res;
    while (used < 2 * kArea) {
      const auto [x, y] = px[pick(rng_)];
      res = tracker.process(x, y);
      ++used;
      if (res.outcome != PatchTracker::Outcome::kPending) break;
    }
    ASSERT_EQ(res.outcome, PatchTracker::Outcome::kShift) << "trial " << trial;
    EXPECT_EQ(res.dx, 1);
    EXPECT_EQ(res.dy, 0);
    EXPECT_LE(used, 2 * kArea);
    EXPECT_EQ(tracker.x(), kX + 1);
  }
}

TEST_F(TrackerTest, EveryAxisShiftIsRecovered) {
  const int shifts[4][2] = {{-1, 0}, {0, 1}, {0, -1}, {1, 0}};
  for (const auto& s : shifts) {
    PatchTracker tracker = make();
    const auto px = template_pixels(s[0], s[1]);
    std::uniform_int_distribution<std::size_t> pick(0, px.size() - 1);
    PatchTracker::Result res;
    for (int i = 0; i < 2 * kArea && res.outcome == PatchTracker::Outcome::kPending; ++i) {
      const auto [x, y] = px[pick(rng_)];
      res = tracker.process(x, y);
    }
    EXPECT_EQ(res.outcome, PatchTracker::Outcome::kShift);
    EXPECT_EQ(res.dx, s[0]);
    EXPECT_EQ(res.dy, s[1]);
  }
}

TEST_F(TrackerTest, RandomNoiseDiverges) {
  std::uniform_int_distribution<int> off(-kRadius, kRadius);
  for (int trial = 0; trial < 20; ++trial) {
    PatchTracker tracker = make();
    bool diverged = false;
    for (int i = 0; i < 10 * kArea && !diverged; ++i) {
      diverged = tracker.process(kX + off(rng_), kY + off(rng_)).outcome ==
                 PatchTracker::Outcome::kDiverged;
    }
    EXPECT_TRUE(diverged) << "trial " << trial;
  }
}

TEST(Frontend, NoiseRoutedToFeatureClosesIt) {
  Frontend fe({});
  std::mt19937_64 rng(3);
  double t = 0.0;
  const FeatureId id = spawn(&fe, 120, 90, &t, &rng);
  ASSERT_GE(id, 0);
  const auto pos = *fe.position(id);
  std::uniform_int_distribution<int> off(-fe.config().registration_radius,
                                         fe.config().registration_radius);
  bool closed = false;
  for (int i = 0; i < 10 * 225 && !closed; ++i) {
    t += 1e-5;
    for (const auto& em : fe.ingest({t, pos.first + off(rng), pos.second + off(rng), 1})) {
      closed = closed || (em.kind == Kind::kClosed && em.id == id);
    }
  }
  EXPECT_TRUE(closed);
  EXPECT_EQ(fe.trajectory(id).status, TrackStatus::kClosed);
  EXPECT_EQ(fe.table().occupied(), fe.active_count());
}

// ---------------------------------------------------------------------------
// Lifecycle

TEST(Frontend, TranslatingCornerTrackFollowsPath) {
  // axis-aligned motions in all directions and arm orientations
  const double velocities[4][2] = {{20, 0}, {-25, 0}, {0, 15}, {0, -30}};
  for (int q = 0; q < 4; ++q) {
    for (const auto& v : velocities) {
      CornerPattern pattern;
      pattern.quadrant = q;
      pattern.velocity = Vec2(v[0], v[1]);
      const auto events = replay_corner(pattern, 100 + q);
      Frontend fe({});
      for (const auto& e : events) fe.ingest(e);

      // the longest track spawned near the vertex follows the corner
      const double near = fe.config().detector_radius + 0.5;
      std::optional<FeatureId> best;
      for (FeatureId id = 0;; ++id) {
        const FeatureTrajectory* tr = nullptr;
        try {
          tr = &fe.trajectory(id);
        } catch (const std::out_of_range&) {
          break;
        }
        const double d =
            (tr->measurements.front().q - corner_position(pattern, tr->front_time())).norm();
        if (d <= near && (!best || tr->measurements.size() >
                                       fe.trajectory(*best).measurements.size())) {
          best = id;
        }
      }
      ASSERT_TRUE(best) << "q=" << q << " v=" << v[0] << "," << v[1];
      const auto& tr = fe.trajectory(*best);
      EXPECT_GE(tr.measurements.size(), fe.config().forward_min);
      // events are emitted at the rounded vertex, so that is the path to follow
      const auto vertex = [&](double t) {
        const Vec2 c = corner_position(pattern, t);
        return Vec2(std::lround(c.x()), std::lround(c.y()));
      };
      const Vec2 q0 = tr.measurements.front().q;
      const Vec2 c0 = vertex(tr.front_time());
      for (const auto& m : tr.measurements) {
        const Vec2 err = (m.q - q0) - (vertex(m.t) - c0);
        EXPECT_LE(err.cwiseAbs().maxCoeff(), 1.0)
            << "q=" << q << " v=" << v[0] << "," << v[1] << " t=" << m.t;
      }
    }
  }
}

TEST(Frontend, MeasurementsRespectMinimumSpacingAndPatchStep) {
  CornerPattern pattern;
  pattern.velocity = Vec2(0, 60);
  pattern.origin = Vec2(120, 30);
  pattern.duration = 1.5;
  FrontendConfig config;
  config.t_min = 0.02;
  Frontend fe(config);
  for (const auto& e : replay_corner(pattern, 9)) fe.ingest(e);
  std::size_t longest = 0;
  for (FeatureId id = 0;; ++id) {
    const FeatureTrajectory* tr = nullptr;
    try {
      tr = &fe.trajectory(id);
    } catch (const std::out_of_range&) {
      break;
    }
    longest = std::max(longest, tr->measurements.size());
    for (std::size_t k = 1; k < tr->measurements.size(); ++k) {
      EXPECT_GE(tr->measurements[k].t - tr->measurements[k - 1].t, config.t_min);
      EXPECT_LE((tr->measurements[k].q - tr->measurements[k - 1].q).cwiseAbs().maxCoeff(),
                config.tracker_radius);
    }
  }
  EXPECT_GE(longest, 10u);
}

TEST(Frontend, AdjacentEventIsRoutedToTracker) {
  Frontend fe({});
  std::mt19937_64 rng(5);
  double t = 0.0;
  const FeatureId id = spawn(&fe, 100, 100, &t, &rng);
  ASSERT_GE(id, 0);
  const auto sae_before = fe.sae().at(101, 100, 1);
  t += 1e-3;
  fe.ingest({t, 101, 100, 1});
  // routed events bypass the SAE
  EXPECT_EQ(fe.sae().at(101, 100, 1), sae_before);
}

TEST(Prune, FreshFeatureIsRetained) {
  Frontend fe({});
  std::mt19937_64 rng(1);
  double t = 0.0;
  const FeatureId id = spawn(&fe, 60, 60, &t, &rng);
  EXPECT_TRUE(fe.prune(t + 0.5 * fe.config().t_max).empty());
  EXPECT_TRUE(fe.position(id));
}

TEST(Prune, IdleFeatureIsClosed) {
  Frontend fe({});
  std::mt19937_64 rng(2);
  double t = 0.0;
  const FeatureId id = spawn(&fe, 60, 60, &t, &rng);
  const double last = fe.trajectory(id).last_update;
  EXPECT_TRUE(fe.prune(last + fe.config().t_max).empty());
  const auto closed = fe.prune(last + fe.config().t_max + 1e-6);
  ASSERT_EQ(closed.size(), 1u);
  EXPECT_EQ(closed[0], id);
  EXPECT_FALSE(fe.position(id));
  EXPECT_EQ(fe.table().occupied(), 0u);
}

TEST(Prune, MixedPopulationClosesExactlyTheStaleSubset) {
  for (int seed = 0; seed < 5; ++seed) {
    Frontend fe({});
    std::mt19937_64 rng(seed);
    double t = 0.0;
    std::vector<FeatureId> ids;
    for (int i = 0; i < 8; ++i) ids.push_back(spawn(&fe, 30 + 25 * i, 40 + 12 * (i % 3), &t, &rng));
    // random subset keeps receiving events for a while
    std::bernoulli_distribution keep(0.5);
    std::vector<FeatureId> kept;
    for (FeatureId id : ids) {
      if (keep(rng)) kept.push_back(id);
    }
    for (int round = 0; round < 10; ++round) {
      t += 0.01;
      for (FeatureId id : kept) {
        if (fe.position(id)) refresh(&fe, id, &t, &rng);
      }
    }
    const double now = t + 0.03;
    std::set<FeatureId> oracle;
    for (FeatureId id : fe.active_ids()) {
      if (now - fe.trajectory(id).last_update > fe.config().t_max) oracle.insert(id);
    }
    const auto closed = fe.prune(now);
    EXPECT_EQ(std::set<FeatureId>(closed.begin(), closed.end()), oracle) << "seed " << seed;
    for (FeatureId id : fe.active_ids()) {
      EXPECT_LE(now - fe.trajectory(id).last_update, fe.config().t_max);
    }
  }
}

TEST(Frontend, ForwardsSnapshotsAtEightThenEveryFour) {
  CornerPattern pattern;
  pattern.velocity = Vec2(40, 0);
  pattern.origin = Vec2(40, 90);
  pattern.duration = 2.0;
  Frontend fe({});
  std::vector<std::size_t> sizes;
  for (const auto& e : replay_corner(pattern, 4)) {
    fe.ingest(e);
    for (const auto& s : fe.take_ready()) {
      if (s.id == 0) sizes.push_back(s.measurements.size());
    }
  }
  fe.close_all();
  for (const auto& s : fe.take_ready()) {
    if (s.id == 0) sizes.push_back(s.measurements.size());
  }
  const std::size_t total = fe.trajectory(0).measurements.size();
  ASSERT_GE(total, 12u);
  ASSERT_GE(sizes.size(), 2u);
  EXPECT_EQ(sizes[0], 8u);
  for (std::size_t k = 1; k + 1 < sizes.size(); ++k) EXPECT_EQ(sizes[k], sizes[k - 1] + 4);
  EXPECT_EQ(sizes.back(), total);
}

// ---------------------------------------------------------------------------
// Invariants

// Several corners moving along different axes, merged by time.
std::vector<Event> multi_corner_stream(int corners, std::uint64_t seed) {
  std::vector<Event> all;
  for (int i = 0; i < corners; ++i) {
    CornerPattern p;
    p.arm_length = 8;
    p.quadrant = i % 4;
    p.origin = Vec2(30 + 45 * (i % 4), 35 + 50 * (i / 4));
    p.velocity = i % 2 == 0 ? Vec2(12, 0) : Vec2(0, -10);
    p.duration = 0.8;
    p.noise_rate = 2000.0;
    const auto ev = replay_corner(p, seed + i);
    all.insert(all.end(), ev.begin(), ev.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return all;
}

TEST(FrontendInvariants, TableCellsAndFeaturesStayConsistent) {
  Frontend fe({});
  const auto events = multi_corner_stream(8, 77);
  const int r = fe.config().registration_radius;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    fe.ingest(events[i]);
    if (i % 97 != 0) continue;
    ++checked;
    const auto ids = fe.active_ids();
    ASSERT_EQ(fe.table().occupied(), ids.size());
    for (FeatureId id : ids) {
      const auto pos = *fe.position(id);
      ASSERT_EQ(fe.table().peek(pos.first, pos.second), id);
    }
    for (std::size_t a = 0; a < ids.size(); ++a) {
      for (std::size_t b = a + 1; b < ids.size(); ++b) {
        const auto pa = *fe.position(ids[a]);
        const auto pb = *fe.position(ids[b]);
        ASSERT_TRUE(std::abs(pa.first - pb.first) > r || std::abs(pa.second - pb.second) > r)
            << "features " << ids[a] << " and " << ids[b] << " are clustered";
      }
    }
  }
  EXPECT_GT(checked, 100u);
}

TEST(FrontendInvariants, MeasurementTimesStrictlyIncrease) {
  Frontend fe({});
  for (const auto& e : multi_corner_stream(6, 5)) fe.ingest(e);
  fe.close_all();
  for (FeatureId id = 0;; ++id) {
    const FeatureTrajectory* tr = nullptr;
    try {
      tr = &fe.trajectory(id);
    } catch (const std::out_of_range&) {
      break;
    }
    for (std::size_t k = 1; k < tr->measurements.size(); ++k) {
      EXPECT_GE(tr->measurements[k].t - tr->measurements[k - 1].t, fe.config().t_min);
    }
  }
}

TEST(FrontendInvariants, CellAccessesPerEventAreBoundedByPatchSize) {
  const FrontendConfig config;
  const auto patch = [](int r) { return static_cast<std::uint64_t>((2 * r + 1) * (2 * r + 1)); };
  // routing lookup, plus either a move (clear, re-check, set) or a creation
  const std::uint64_t bound =
      patch(config.registration_radius) +
      std::max(patch(config.registration_radius) + 2, patch(config.suppression_radius) + 1);
  std::uint64_t worst_by_count[2] = {0, 0};
  double mean_by_count[2] = {0, 0};
  const int counts[2] = {1, 8};
  for (int c = 0; c < 2; ++c) {
    Frontend fe(config);
    const auto events = multi_corner_stream(counts[c], 11);
    for (const auto& e : events) {
      const std::uint64_t before = fe.event_cell_accesses();
      fe.ingest(e);
      worst_by_count[c] = std::max(worst_by_count[c], fe.event_cell_accesses() - before);
    }
    mean_by_count[c] = static_cast<double>(fe.event_cell_accesses()) / events.size();
    EXPECT_LE(worst_by_count[c], bound);
  }
  // the per-event cost does not grow with the number of active features
  EXPECT_NEAR(mean_by_count[0], mean_by_count[1], 0.2 * mean_by_count[0]);
}

}  // namespace
}  // namespace ctevo

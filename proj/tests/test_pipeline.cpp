#include "ctevo/eval.hpp"
#include "ctevo/io.hpp"
#include "ctevo/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <sstream>
#include <thread>

namespace ctevo {
namespace {

TEST(BoundedQueue, FifoAndCloseDrains) {
  BoundedQueue<int> q(4);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(q.push(i));
  q.close();
  EXPECT_FALSE(q.push(9));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(q.pop(), i);
  EXPECT_FALSE(q.pop().has_value());
}

TEST(BoundedQueue, ProducerBlocksAtCapacity) {
  BoundedQueue<int> q(3);
  std::atomic<int> pushed{0};
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) {
      q.push(i);
      ++pushed;
    }
    q.close();
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(pushed.load(), 3);
  int expected = 0;
  while (auto v = q.pop()) {
    EXPECT_EQ(*v, expected++);
  }
  producer.join();
  EXPECT_EQ(expected, 100);
  EXPECT_LE(q.high_water(), 3u);
}

TEST(BoundedQueue, CloseReleasesBlockedProducer) {
  BoundedQueue<int> q(1);
  q.push(0);
  std::thread producer([&] { EXPECT_FALSE(q.push(1)); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  q.close();
  producer.join();
}

// Slow circle rendered as events: corners move a few hundred px/s at most,
// which the patch trackers can follow.
struct EventFixture {
  Config config;
  SyntheticData data;
  std::vector<Event> events;
};

const EventFixture& event_fixture() {
  static const EventFixture f = [] {
    EventFixture x;
    x.config = default_config();
    x.config.scene.duration = 1.5;
    x.config.scene.trajectory.revolutions_per_second = 0.1;
    x.config.finalize();
    x.data = generate(x.config.scene, 3);
    x.events = render_events(x.config.scene, x.data, x.config.render, 4);
    return x;
  }();
  return f;
}

std::string exported(const PipelineResult& r) {
  std::ostringstream out;
  write_trajectory(out, r.trajectory);
  write_landmarks(out, r.landmarks);
  return out.str();
}

TEST(Pipeline, ThreadModesProduceIdenticalExports) {
  const EventFixture& f = event_fixture();
  Config one = f.config;
  one.pipeline.threads = 1;
  Config two = f.config;
  two.pipeline.threads = 2;
  // tiny queue: the producer spends most of the run blocked on backpressure
  two.pipeline.queue_capacity = 2;
  std::vector<double> sink_one;
  std::vector<double> sink_two;
  const PipelineResult a =
      run_pipeline(vector_source(f.events), one, [&](const EstimatorSnapshot& s) { sink_one.push_back(s.time); });
  const PipelineResult b =
      run_pipeline(vector_source(f.events), two, [&](const EstimatorSnapshot& s) { sink_two.push_back(s.time); });
  ASSERT_TRUE(a.initialized);
  EXPECT_GT(a.stats.solves, 5u);
  EXPECT_EQ(a.events, f.events.size());
  EXPECT_EQ(a.snapshots, b.snapshots);
  EXPECT_EQ(sink_one, sink_two);
  EXPECT_LE(b.queue_high_water, 2u);
  EXPECT_EQ(exported(a), exported(b));
}

TEST(Pipeline, InputErrorsPropagateFromProducerThread) {
  const EventFixture& f = event_fixture();
  for (int threads : {1, 2}) {
    Config c = f.config;
    c.pipeline.threads = threads;
    c.pipeline.queue_capacity = 1;
    std::size_t i = 0;
    const EventSource source = [&]() -> std::optional<Event> {
      if (i == 20000) throw ParseError("events", 20001, "garbage", "bad line");
      return f.events[i++];
    };
    EXPECT_THROW(run_pipeline(source, c), ParseError) << threads;
  }
}

TEST(Pipeline, EmptyStreamNeverInitializes) {
  const Config c = default_config();
  const std::vector<Event> none;
  const PipelineResult r = run_pipeline(vector_source(none), c);
  EXPECT_FALSE(r.initialized);
  EXPECT_TRUE(r.trajectory.empty());
}

TEST(Pipeline, EvaluationIsGaugeInvariant) {
  Config c = default_config();
  c.scene.duration = 3.0;
  c.finalize();
  const SyntheticData data = generate(c.scene, 8);
  const PipelineResult r = run_snapshots(snapshot_stream(data.tracks), c);
  ASSERT_TRUE(r.initialized);
  std::vector<StampedPose> gt;
  for (const auto& s : data.groundtruth) gt.push_back({s.t, s.pose});
  const std::vector<StampedPose> est = stamped(r.trajectory);
  const Evaluation base = evaluate(est, gt);
  EXPECT_LT(base.rms_rte, 0.05);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    Sim3 g;
    g.scale = 0.2 + 3.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    g.rotation = testing::random_pose(rng).rotation();
    g.translation = testing::random_pose(rng, 20.0).translation();
    const Evaluation moved = evaluate(transformed(g, est), gt);
    EXPECT_NEAR(moved.ate, base.ate, 1e-9);
    EXPECT_NEAR(moved.rms_rte, base.rms_rte, 1e-9);
  }
}

}  // namespace
}  // namespace ctevo

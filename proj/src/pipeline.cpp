#include "ctevo/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <exception>
#include <thread>

namespace ctevo {

namespace {

using Clock = std::chrono::steady_clock;

// Drives the frontend over the stream and hands every due snapshot to
// `forward`, which returns false to stop early.
void produce(const EventSource& events, Frontend& frontend, PipelineResult& result,
             const std::function<bool(FeatureTrajectory&&)>& forward) {
  const auto flush = [&] {
    for (auto& s : frontend.take_ready()) {
      ++result.snapshots;
      if (!forward(std::move(s))) return false;
    }
    return true;
  };
  while (auto e = events()) {
    ++result.events;
    frontend.ingest(*e);
    if (!flush()) return;
  }
  frontend.close_all();
  flush();
}

void collect(const Estimator& estimator, const Frontend* frontend, PipelineResult& result,
             Clock::time_point start) {
  result.trajectory = estimator.trajectory();
  result.landmarks = estimator.landmark_map();
  result.stats = estimator.stats();
  result.initialized = estimator.initialized();
  if (frontend) {
    result.rejected_events = frontend->rejected_events();
    result.frontend_cell_accesses = frontend->event_cell_accesses();
  }
  result.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

PipelineResult run_pipeline(const EventSource& events, const Config& config,
                            const SnapshotSink& sink) {
  const auto start = Clock::now();
  PipelineResult result;
  Frontend frontend(config.frontend);
  Estimator estimator(config.estimator);
  if (sink) estimator.set_sink(sink);

  if (config.pipeline.threads == 1) {
    produce(events, frontend, result, [&](FeatureTrajectory&& s) {
      estimator.process(s);
      return true;
    });
    estimator.finish();
  } else {
    BoundedQueue<FeatureTrajectory> queue(config.pipeline.queue_capacity);
    std::exception_ptr producer_error;
    std::exception_ptr consumer_error;
    std::thread producer([&] {
      try {
        produce(events, frontend, result,
                [&](FeatureTrajectory&& s) { return queue.push(std::move(s)); });
      } catch (...) {
        producer_error = std::current_exception();
      }
      queue.close();
    });
    std::thread consumer([&] {
      try {
        while (auto s = queue.pop()) estimator.process(*s);
        if (!producer_error) estimator.finish();
      } catch (...) {
        consumer_error = std::current_exception();
        queue.close();  // unblocks a producer waiting on a full queue
      }
    });
    producer.join();
    consumer.join();
    if (producer_error) std::rethrow_exception(producer_error);
    if (consumer_error) std::rethrow_exception(consumer_error);
    result.queue_high_water = queue.high_water();
  }
  collect(estimator, &frontend, result, start);
  spdlog::info("pipeline: {} events, {} snapshots, {} solves, max window {}", result.events,
               result.snapshots, result.stats.solves, result.stats.max_window);
  return result;
}

PipelineResult run_snapshots(const std::vector<FeatureTrajectory>& snapshots, const Config& config,
                             const SnapshotSink& sink) {
  const auto start = Clock::now();
  PipelineResult result;
  Estimator estimator(config.estimator);
  if (sink) estimator.set_sink(sink);
  for (const auto& s : snapshots) {
    estimator.process(s);
    ++result.snapshots;
  }
  estimator.finish();
  collect(estimator, nullptr, result, start);
  return result;
}

EventSource vector_source(const std::vector<Event>& events) {
  return [&events, i = std::size_t{0}]() mutable -> std::optional<Event> {
    if (i == events.size()) return std::nullopt;
    return events[i++];
  };
}

}  // namespace ctevo

// Frontend -> bounded FIFO -> estimator.
//
// With one thread the frontend and the estimator run interleaved on the
// caller's thread; with two they run on a producer and a consumer thread.
// Either way the estimator receives the same snapshots in the same order, so
// the results are identical.

#pragma once

#include "ctevo/config.hpp"
#include "ctevo/estimator.hpp"
#include "ctevo/frontend.hpp"

#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

namespace ctevo {

/// Blocking FIFO with a fixed capacity. push() waits while the queue is full;
/// pop() waits while it is empty and returns nullopt once closed and drained.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  /// False if the queue was closed; the item is dropped.
  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    high_water_ = std::max(high_water_, items_.size());
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
  bool closed_ = false;
};

struct PipelineResult {
  std::vector<MotionState> trajectory;
  std::map<FeatureId, Vec3> landmarks;
  EstimatorStats stats;
  bool initialized = false;
  std::size_t events = 0;
  std::size_t rejected_events = 0;
  std::size_t snapshots = 0;
  std::size_t queue_high_water = 0;
  std::uint64_t frontend_cell_accesses = 0;
  double runtime_seconds = 0.0;
};

using EventSource = std::function<std::optional<Event>()>;
using SnapshotSink = std::function<void(const EstimatorSnapshot&)>;

/// Runs the full pipeline over an event stream in stream order. Exceptions
/// from either side (parse errors, EstimationError) stop both and are
/// rethrown on the calling thread.
PipelineResult run_pipeline(const EventSource& events, const Config& config,
                            const SnapshotSink& sink = {});

/// Estimator only, fed with precomputed trajectory snapshots (e.g. synthetic
/// tracks replayed through snapshot_stream).
PipelineResult run_snapshots(const std::vector<FeatureTrajectory>& snapshots, const Config& config,
                             const SnapshotSink& sink = {});

EventSource vector_source(const std::vector<Event>& events);

}  // namespace ctevo

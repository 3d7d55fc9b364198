// Plain-text dataset formats: event streams, ground-truth poses, exported
// trajectories, landmark maps and the run metrics summary.
//
//   events        t x y polarity               (s, px, px, 0|1)
//   ground truth  t px py pz qx qy qz qw
//   trajectory    t px py pz qx qy qz qw vx vy vz wx wy wz
//   landmarks     id x y z
//
// Lines that are empty or start with '#' are ignored everywhere. Numbers are
// written with 12 significant digits.

#pragma once

#include "ctevo/frontend.hpp"
#include "ctevo/gp_motion.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctevo {

/// Unreadable or malformed input.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input. Carries the 1-based line number and the offending text.
class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& content,
             const std::string& reason);

  std::size_t line() const { return line_; }
  const std::string& content() const { return content_; }

 private:
  std::size_t line_;
  std::string content_;
};

struct StampedPose {
  double t = 0.0;
  Pose pose;
};

/// Streaming reader of an event file. Strict mode throws ParseError on the
/// first malformed line; lenient mode skips and counts it. Lines whose
/// timestamp goes backwards are skipped and counted in both modes.
class EventReader {
 public:
  EventReader(std::istream& in, bool strict, std::string source = "events");

  std::optional<Event> next();

  std::size_t line() const { return line_; }
  std::size_t malformed() const { return malformed_; }
  std::size_t out_of_order() const { return out_of_order_; }

 private:
  std::istream& in_;
  bool strict_;
  std::string source_;
  std::size_t line_ = 0;
  std::size_t malformed_ = 0;
  std::size_t out_of_order_ = 0;
  double last_t_ = -std::numeric_limits<double>::infinity();
};

struct EventFile {
  std::vector<Event> events;
  std::size_t malformed = 0;
  std::size_t out_of_order = 0;
};

EventFile read_events(std::istream& in, bool strict, const std::string& source = "events");
EventFile read_events(const std::filesystem::path& path, bool strict);
void write_events(std::ostream& out, const std::vector<Event>& events);

/// Quaternions further than 1e-3 from unit norm are malformed; the rest are
/// renormalized. Timestamps must increase.
std::vector<StampedPose> read_groundtruth(std::istream& in, bool strict,
                                          const std::string& source = "groundtruth");
std::vector<StampedPose> read_groundtruth(const std::filesystem::path& path, bool strict);
void write_groundtruth(std::ostream& out, const std::vector<StampedPose>& poses);

/// Accepts the 14-column trajectory format and the 8-column pose format
/// (velocity is then zero).
std::vector<MotionState> read_trajectory(std::istream& in, const std::string& source = "trajectory");
std::vector<MotionState> read_trajectory(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const std::vector<MotionState>& states);

std::map<std::int64_t, Vec3> read_landmarks(std::istream& in, const std::string& source = "landmarks");
void write_landmarks(std::ostream& out, const std::map<std::int64_t, Vec3>& landmarks);

/// Feature tracks as "id t x y" rows, one measurement per line.
std::vector<FeatureTrajectory> read_tracks(std::istream& in, const std::string& source = "tracks");
void write_tracks(std::ostream& out, const std::vector<FeatureTrajectory>& tracks);

struct RunMetrics {
  std::optional<double> rms_rte;
  std::optional<double> ate;
  double rte_delta = 0.5;
  std::size_t events = 0;
  std::size_t snapshots = 0;
  std::size_t solves = 0;
  double runtime_seconds = 0.0;
  double mean_solve_seconds = 0.0;
  std::size_t max_window = 0;
  std::size_t max_factors = 0;
  std::size_t marginalized_knots = 0;
  std::size_t marginalized_trajectories = 0;
  std::vector<std::size_t> window_trace;
  std::vector<double> solve_time_trace;
};

/// JSON summary.
void write_metrics(std::ostream& out, const RunMetrics& metrics);

/// Opens a file, throwing InputError (read) or std::runtime_error (write).
std::ifstream open_input(const std::filesystem::path& path);
std::ofstream open_output(const std::filesystem::path& path);

}  // namespace ctevo

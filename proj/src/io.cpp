#include "ctevo/io.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

namespace ctevo {

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& content,
                       const std::string& reason)
    : InputError(fmt::format("{}:{}: {} in '{}'", source, line, reason, content)),
      line_(line),
      content_(content) {}

namespace {

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

// Splits on whitespace and parses every field as a double. Returns false on a
// field count mismatch or any non-numeric field.
bool parse_numbers(const std::string& line, std::size_t expected, std::vector<double>* out) {
  out->clear();
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r' || *p == ',')) ++p;
    if (p == end) break;
    double v = 0.0;
    const auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r' &&
                              *next != ',')) {
      return false;
    }
    if (!std::isfinite(v)) return false;
    out->push_back(v);
    p = next;
  }
  return out->size() == expected;
}

bool parse_any(const std::string& line, std::initializer_list<std::size_t> counts,
               std::vector<double>* out) {
  for (std::size_t n : counts) {
    if (parse_numbers(line, n, out)) return true;
  }
  return false;
}

bool is_integer(double v) { return std::floor(v) == v; }

Pose pose_from(const std::vector<double>& v, std::size_t offset, double tolerance, bool* ok) {
  const Eigen::Quaterniond q(v[offset + 6], v[offset + 3], v[offset + 4], v[offset + 5]);
  *ok = std::abs(q.norm() - 1.0) <= tolerance;
  return Pose::FromQuaternion(q.normalized(), Vec3(v[offset], v[offset + 1], v[offset + 2]));
}

void write_pose(std::ostream& out, const Pose& pose) {
  const Eigen::Quaterniond q = pose.quaternion();
  const Vec3& p = pose.translation();
  fmt::print(out, " {:.12g} {:.12g} {:.12g} {:.12g} {:.12g} {:.12g} {:.12g}", p.x(), p.y(), p.z(),
             q.x(), q.y(), q.z(), q.w());
}

}  // namespace

// ---------------------------------------------------------------------------
// Events

EventReader::EventReader(std::istream& in, bool strict, std::string source)
    : in_(in), strict_(strict), source_(std::move(source)) {}

std::optional<Event> EventReader::next() {
  std::string text;
  std::vector<double> v;
  while (std::getline(in_, text)) {
    ++line_;
    if (skippable(text)) continue;
    const bool ok = parse_numbers(text, 4, &v) && is_integer(v[1]) && is_integer(v[2]) &&
                    (v[3] == 0.0 || v[3] == 1.0);
    if (!ok) {
      if (strict_) throw ParseError(source_, line_, text, "expected 't x y polarity'");
      ++malformed_;
      continue;
    }
    if (v[0] < last_t_) {
      ++out_of_order_;
      continue;
    }
    last_t_ = v[0];
    return Event{v[0], static_cast<int>(v[1]), static_cast<int>(v[2]), v[3] > 0.5 ? 1 : -1};
  }
  return std::nullopt;
}

EventFile read_events(std::istream& in, bool strict, const std::string& source) {
  EventReader reader(in, strict, source);
  EventFile file;
  while (auto e = reader.next()) file.events.push_back(*e);
  file.malformed = reader.malformed();
  file.out_of_order = reader.out_of_order();
  return file;
}

EventFile read_events(const std::filesystem::path& path, bool strict) {
  std::ifstream in = open_input(path);
  return read_events(in, strict, path.string());
}

void write_events(std::ostream& out, const std::vector<Event>& events) {
  for (const Event& e : events) {
    fmt::print(out, "{:.12g} {} {} {}\n", e.t, e.x, e.y, e.polarity > 0 ? 1 : 0);
  }
}

// ---------------------------------------------------------------------------
// Poses

std::vector<StampedPose> read_groundtruth(std::istream& in, bool strict, const std::string& source) {
  std::vector<StampedPose> poses;
  std::string text;
  std::vector<double> v;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skippable(text)) continue;
    std::string reason;
    bool unit = false;
    if (!parse_numbers(text, 8, &v)) {
      reason = "expected 't px py pz qx qy qz qw'";
    } else {
      const Pose pose = pose_from(v, 1, 1e-3, &unit);
      if (!unit) {
        reason = "quaternion is not unit length";
      } else if (!poses.empty() && v[0] <= poses.back().t) {
        reason = "timestamp does not increase";
      } else {
        poses.push_back({v[0], pose});
        continue;
      }
    }
    if (strict) throw ParseError(source, line, text, reason);
  }
  return poses;
}

std::vector<StampedPose> read_groundtruth(const std::filesystem::path& path, bool strict) {
  std::ifstream in = open_input(path);
  return read_groundtruth(in, strict, path.string());
}

void write_groundtruth(std::ostream& out, const std::vector<StampedPose>& poses) {
  for (const auto& p : poses) {
    fmt::print(out, "{:.12g}", p.t);
    write_pose(out, p.pose);
    out << '\n';
  }
}

std::vector<MotionState> read_trajectory(std::istream& in, const std::string& source) {
  std::vector<MotionState> states;
  std::string text;
  std::vector<double> v;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skippable(text)) continue;
    if (!parse_any(text, {14, 8}, &v)) {
      throw ParseError(source, line, text, "expected 8 or 14 numeric columns");
    }
    bool unit = false;
    MotionState s{v[0], pose_from(v, 1, 1e-3, &unit), Twist::Zero()};
    if (!unit) throw ParseError(source, line, text, "quaternion is not unit length");
    if (v.size() == 14) {
      for (int i = 0; i < 6; ++i) s.velocity(i) = v[8 + i];
    }
    states.push_back(s);
  }
  return states;
}

std::vector<MotionState> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return read_trajectory(in, path.string());
}

void write_trajectory(std::ostream& out, const std::vector<MotionState>& states) {
  for (const auto& s : states) {
    fmt::print(out, "{:.12g}", s.t);
    write_pose(out, s.pose);
    for (int i = 0; i < 6; ++i) fmt::print(out, " {:.12g}", s.velocity(i));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Landmarks and tracks

std::map<std::int64_t, Vec3> read_landmarks(std::istream& in, const std::string& source) {
  std::map<std::int64_t, Vec3> landmarks;
  std::string text;
  std::vector<double> v;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skippable(text)) continue;
    if (!parse_numbers(text, 4, &v) || !is_integer(v[0])) {
      throw ParseError(source, line, text, "expected 'id x y z'");
    }
    landmarks[static_cast<std::int64_t>(v[0])] = Vec3(v[1], v[2], v[3]);
  }
  return landmarks;
}

void write_landmarks(std::ostream& out, const std::map<std::int64_t, Vec3>& landmarks) {
  for (const auto& [id, p] : landmarks) {
    fmt::print(out, "{} {:.12g} {:.12g} {:.12g}\n", id, p.x(), p.y(), p.z());
  }
}

std::vector<FeatureTrajectory> read_tracks(std::istream& in, const std::string& source) {
  std::map<FeatureId, FeatureTrajectory> by_id;
  std::string text;
  std::vector<double> v;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (skippable(text)) continue;
    if (!parse_numbers(text, 4, &v) || !is_integer(v[0])) {
      throw ParseError(source, line, text, "expected 'id t x y'");
    }
    FeatureTrajectory& f = by_id[static_cast<FeatureId>(v[0])];
    f.id = static_cast<FeatureId>(v[0]);
    if (!f.measurements.empty() && v[1] <= f.back_time()) {
      throw ParseError(source, line, text, "track timestamps must increase");
    }
    f.measurements.push_back({v[1], Vec2(v[2], v[3])});
    f.last_update = v[1];
    f.status = TrackStatus::kClosed;
  }
  std::vector<FeatureTrajectory> tracks;
  for (auto& [id, f] : by_id) tracks.push_back(std::move(f));
  return tracks;
}

void write_tracks(std::ostream& out, const std::vector<FeatureTrajectory>& tracks) {
  for (const auto& f : tracks) {
    for (const auto& m : f.measurements) {
      fmt::print(out, "{} {:.12g} {:.12g} {:.12g}\n", f.id, m.t, m.q.x(), m.q.y());
    }
  }
}

// ---------------------------------------------------------------------------
// Metrics

void write_metrics(std::ostream& out, const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["rms_rte"] = m.rms_rte ? nlohmann::ordered_json(*m.rms_rte) : nlohmann::ordered_json();
  j["ate"] = m.ate ? nlohmann::ordered_json(*m.ate) : nlohmann::ordered_json();
  j["rte_delta"] = m.rte_delta;
  j["events"] = m.events;
  j["snapshots"] = m.snapshots;
  j["solves"] = m.solves;
  j["runtime_seconds"] = m.runtime_seconds;
  j["mean_solve_seconds"] = m.mean_solve_seconds;
  j["max_window"] = m.max_window;
  j["max_factors"] = m.max_factors;
  j["marginalized_knots"] = m.marginalized_knots;
  j["marginalized_trajectories"] = m.marginalized_trajectories;
  j["window_trace"] = m.window_trace;
  j["solve_time_trace"] = m.solve_time_trace;
  out << j.dump(2) << '\n';
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "' for reading");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace ctevo

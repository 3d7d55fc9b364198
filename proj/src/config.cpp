#include "ctevo/config.hpp"

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <vector>

namespace ctevo {

namespace {

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return fmt::format("{:.12g}", v);
  } else {
    return fmt::format("{}", v);
  }
}

template <typename T>
T parse_value(const std::string& text) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw boost::bad_lexical_cast();
  } else {
    // lexical_cast wraps "-1" into a huge unsigned value
    if (std::is_unsigned_v<T> && text.find('-') != std::string::npos) throw boost::bad_lexical_cast();
    return boost::lexical_cast<T>(text);
  }
}

class Table {
 public:
  template <typename T>
  void add(const std::string& section, const std::string& key, T& field) {
    T* f = &field;
    bindings_.push_back({section, key, [f](const std::string& s) { *f = parse_value<T>(s); },
                         [f] { return format_value(*f); }});
  }

  void add(const std::string& section, const std::string& key, Vec3& v, const char* suffix = "") {
    const char* axes[] = {"x", "y", "z"};
    for (int i = 0; i < 3; ++i) add(section, fmt::format("{}{}{}", key, suffix, axes[i]), v(i));
  }

  void add_kind(const std::string& section, const std::string& key, TrajectoryKind& kind) {
    TrajectoryKind* k = &kind;
    bindings_.push_back({section, key,
                         [k](const std::string& s) {
                           try {
                             *k = parse_trajectory_kind(s);
                           } catch (const std::invalid_argument&) {
                             throw boost::bad_lexical_cast();
                           }
                         },
                         [k] { return to_string(*k); }});
  }

  const std::vector<Binding>& bindings() const { return bindings_; }

 private:
  std::vector<Binding> bindings_;
};

Table make_table(Config& c) {
  Table t;
  CameraModel& cam = c.camera;
  t.add("camera", "fx", cam.fx);
  t.add("camera", "fy", cam.fy);
  t.add("camera", "cx", cam.cx);
  t.add("camera", "cy", cam.cy);
  t.add("camera", "width", cam.width);
  t.add("camera", "height", cam.height);
  t.add("camera", "k1", cam.distortion.k1);
  t.add("camera", "k2", cam.distortion.k2);
  t.add("camera", "p1", cam.distortion.p1);
  t.add("camera", "p2", cam.distortion.p2);

  FrontendConfig& f = c.frontend;
  t.add("frontend", "registration_radius", f.registration_radius);
  t.add("frontend", "tracker_radius", f.tracker_radius);
  t.add("frontend", "detector_radius", f.detector_radius);
  t.add("frontend", "detector_newest", f.detector_newest);
  t.add("frontend", "template_newest", f.template_newest);
  t.add("frontend", "harris_k", f.harris_k);
  t.add("frontend", "harris_threshold", f.harris_threshold);
  t.add("frontend", "suppression_radius", f.suppression_radius);
  t.add("frontend", "t_min", f.t_min);
  t.add("frontend", "t_max", f.t_max);
  t.add("frontend", "prune_period", f.prune_period);
  t.add("frontend", "tracker_min_events", f.tracker_min_events);
  t.add("frontend", "tracker_margin", f.tracker_margin);
  t.add("frontend", "tracker_floor", f.tracker_floor);
  t.add("frontend", "forward_min", f.forward_min);
  t.add("frontend", "forward_step", f.forward_step);

  t.add("prior", "qc_translation", c.qc_translation);
  t.add("prior", "qc_rotation", c.qc_rotation);

  EstimatorConfig& e = c.estimator;
  t.add("estimator", "knot_spacing", e.knot_spacing);
  t.add("estimator", "initial_knots", e.initial_knots);
  t.add("estimator", "min_window", e.min_window);
  t.add("estimator", "max_window", e.max_window);
  t.add("estimator", "init_trajectories", e.init_trajectories);
  t.add("estimator", "init_timeout", e.init_timeout);
  t.add("estimator", "min_triangulation_views", e.min_triangulation_views);
  t.add("estimator", "outlier_rms_px", e.outlier_rms_px);
  t.add("estimator", "pixel_sigma", e.graph.pixel_sigma);
  t.add("estimator", "huber_delta_px", e.graph.huber_delta_px);
  t.add("estimator", "min_depth", e.graph.min_depth);
  t.add("estimator", "gauge_sigma", e.graph.gauge_sigma);
  t.add("estimator", "scale_sigma", e.graph.scale_sigma);

  t.add("triangulation", "max_rms_px", e.gates.max_rms_px);
  t.add("triangulation", "min_parallax_deg", e.gates.min_parallax_deg);
  t.add("triangulation", "min_depth", e.gates.min_depth);
  t.add("triangulation", "max_depth", e.gates.max_depth);

  t.add("solver", "initial_lambda", e.lm.initial_lambda);
  t.add("solver", "lambda_factor", e.lm.lambda_factor);
  t.add("solver", "max_iterations", e.lm.max_iterations);
  t.add("solver", "min_relative_decrease", e.lm.min_relative_decrease);
  t.add("solver", "min_step", e.lm.min_step);
  t.add("solver", "max_lambda", e.lm.max_lambda);

  SceneSpec& s = c.scene;
  t.add_kind("scene", "trajectory", s.trajectory.kind);
  t.add("scene", "radius", s.trajectory.radius);
  t.add("scene", "revolutions_per_second", s.trajectory.revolutions_per_second);
  t.add("scene", "climb_rate", s.trajectory.climb_rate);
  t.add("scene", "line_velocity", s.trajectory.line_velocity, "_");
  t.add("scene", "gp_sigma_translation", s.trajectory.gp_sigma_translation);
  t.add("scene", "gp_sigma_rotation", s.trajectory.gp_sigma_rotation);
  t.add("scene", "duration", s.duration);
  t.add("scene", "landmark_count", s.landmark_count);
  t.add("scene", "box_min", s.box_min, "_");
  t.add("scene", "box_max", s.box_max, "_");
  t.add("scene", "rate_hz", s.rate_hz);
  t.add("scene", "pixel_sigma", s.pixel_sigma);
  t.add("scene", "min_depth", s.min_depth);
  t.add("scene", "max_depth", s.max_depth);
  t.add("scene", "border_px", s.border_px);
  t.add("scene", "track_lifetime_min", s.track_lifetime_min);
  t.add("scene", "track_lifetime_max", s.track_lifetime_max);
  t.add("scene", "min_parallax_deg", s.min_parallax_deg);
  t.add("scene", "groundtruth_rate_hz", s.groundtruth_rate_hz);

  t.add("render", "arm_length", c.render.arm_length);
  t.add("render", "pixel_rate", c.render.pixel_rate);
  t.add("render", "noise_rate", c.render.noise_rate);

  t.add("eval", "rte_delta", c.eval.rte_delta);
  t.add("eval", "association_dt", c.eval.association_dt);

  t.add("pipeline", "queue_capacity", c.pipeline.queue_capacity);
  t.add("pipeline", "threads", c.pipeline.threads);
  t.add("pipeline", "strict", c.pipeline.strict);
  return t;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid configuration: " + what);
}

}  // namespace

void Config::finalize() {
  require(camera.is_valid(), "camera intrinsics");
  require(qc_translation > 0.0 && qc_rotation > 0.0, "prior qc must be positive");
  require(pipeline.threads == 1 || pipeline.threads == 2, "pipeline.threads must be 1 or 2");
  require(pipeline.queue_capacity > 0, "pipeline.queue_capacity must be positive");
  require(eval.rte_delta > 0.0 && eval.association_dt > 0.0, "eval windows must be positive");
  require(render.arm_length > 0 && render.pixel_rate > 0.0, "render pattern");
  frontend.width = camera.width;
  frontend.height = camera.height;
  estimator.graph.camera = camera;
  estimator.graph.qc = QcModel::Diagonal(qc_translation, qc_rotation);
  scene.camera = camera;
  try {
    Estimator check(estimator);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

Config default_config() {
  Config c;
  c.finalize();
  return c;
}

Config read_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config syntax error at line {}: {}", e.line(), e.message()));
  }
  Config c;
  Table table = make_table(c);
  std::map<std::string, const Binding*> by_name;
  for (const auto& b : table.bindings()) by_name[b.section + "." + b.key] = &b;

  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) {
      throw ConfigError("config key '" + section + "' must live in a section");
    }
    for (const auto& [key, value] : keys) {
      const std::string name = section + "." + key;
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw ConfigError("unknown config key '" + name + "'");
      try {
        it->second->set(value.data());
      } catch (const boost::bad_lexical_cast&) {
        throw ConfigError("bad value for '" + name + "': '" + value.data() + "'");
      }
    }
  }
  c.finalize();
  return c;
}

Config read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  return read_config(in);
}

void write_config(std::ostream& out, const Config& config) {
  Config copy = config;
  const Table table = make_table(copy);
  std::string section;
  for (const auto& b : table.bindings()) {
    if (b.section != section) {
      if (!section.empty()) out << '\n';
      section = b.section;
      out << '[' << section << "]\n";
    }
    out << b.key << " = " << b.get() << '\n';
  }
}

}  // namespace ctevo

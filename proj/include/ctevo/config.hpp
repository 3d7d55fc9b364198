// Run configuration as an INI document. Every tunable has a default; keys the
// parser does not know are rejected.
//
//   [camera] [frontend] [prior] [estimator] [triangulation] [solver]
//   [scene] [render] [eval] [pipeline]
//
// write_config() emits every key with its current value.

#pragma once

#include "ctevo/estimator.hpp"
#include "ctevo/frontend.hpp"
#include "ctevo/simgen.hpp"

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace ctevo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  /// Time separation of the relative-error pose pairs (s).
  double rte_delta = 0.5;
  /// Nearest-timestamp association window (s).
  double association_dt = 0.01;
};

struct PipelineConfig {
  /// Trajectory snapshots held between frontend and estimator.
  std::size_t queue_capacity = 1024;
  int threads = 1;
  /// Abort on the first malformed input line instead of skipping it.
  bool strict = false;
};

struct Config {
  CameraModel camera = SceneSpec{}.camera;
  FrontendConfig frontend;
  /// Power spectral density of the white-noise acceleration, as standard
  /// deviations of its translational and rotational parts.
  double qc_translation = 1.0;
  double qc_rotation = 1.0;
  EstimatorConfig estimator;
  SceneSpec scene;
  EventRenderSpec render;
  EvalConfig eval;
  PipelineConfig pipeline;

  /// Copies the shared camera and motion prior into the module configs and
  /// checks value ranges. Throws ConfigError.
  void finalize();
};

Config default_config();

/// Parses an INI document over the defaults. Throws ConfigError on syntax
/// errors, unknown sections or keys, unparsable values or invalid ranges.
Config read_config(std::istream& in);
Config read_config(const std::filesystem::path& path);

void write_config(std::ostream& out, const Config& config);

}  // namespace ctevo

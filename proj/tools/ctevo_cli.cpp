// ctevo: run the odometry pipeline, generate synthetic fixtures, evaluate
// trajectories.
//
// Exit codes: 0 success, 1 other failure, 2 configuration/usage error,
// 3 input parse error, 4 estimation failure.

#include "ctevo/config.hpp"
#include "ctevo/eval.hpp"
#include "ctevo/io.hpp"
#include "ctevo/pipeline.hpp"
#include "ctevo/simgen.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace ctevo;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kInput = 3, kEstimation = 4 };

Config load_config(const std::string& path) {
  return path.empty() ? default_config() : read_config(fs::path(path));
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());
}

struct RunArgs {
  std::string config;
  std::string events;
  std::string gt;
  std::string out = "out";
  int threads = 0;
  bool strict = false;
  double delta = 0.0;
};

int run(const RunArgs& a) {
  Config config = load_config(a.config);
  if (a.threads != 0) config.pipeline.threads = a.threads;
  if (a.strict) config.pipeline.strict = true;
  if (a.delta > 0.0) config.eval.rte_delta = a.delta;
  config.finalize();

  std::optional<std::vector<StampedPose>> gt;
  if (!a.gt.empty()) gt = read_groundtruth(fs::path(a.gt), config.pipeline.strict);

  std::ifstream in = open_input(a.events);
  EventReader reader(in, config.pipeline.strict, a.events);
  const PipelineResult result = run_pipeline([&] { return reader.next(); }, config);
  if (reader.malformed() > 0 || reader.out_of_order() > 0) {
    spdlog::warn("{}: skipped {} malformed and {} out-of-order lines", a.events,
                 reader.malformed(), reader.out_of_order());
  }
  if (!result.initialized || result.trajectory.empty()) {
    spdlog::error("estimator never initialized ({} snapshots from {} events)", result.snapshots,
                  result.events);
    return kEstimation;
  }

  const fs::path out(a.out);
  ensure_dir(out);
  {
    std::ofstream f = open_output(out / "trajectory.txt");
    write_trajectory(f, result.trajectory);
  }
  {
    std::ofstream f = open_output(out / "landmarks.txt");
    write_landmarks(f, result.landmarks);
  }

  RunMetrics m;
  m.rte_delta = config.eval.rte_delta;
  m.events = result.events;
  m.snapshots = result.snapshots;
  m.solves = result.stats.solves;
  m.runtime_seconds = result.runtime_seconds;
  m.mean_solve_seconds = m.solves ? result.stats.solve_seconds / static_cast<double>(m.solves) : 0.0;
  m.max_window = result.stats.max_window;
  m.max_factors = result.stats.max_factors;
  m.marginalized_knots = result.stats.marginalized_knots;
  m.marginalized_trajectories = result.stats.marginalized_trajectories;
  m.window_trace = result.stats.window_trace;
  m.solve_time_trace = result.stats.solve_time_trace;
  int status = kOk;
  if (gt) {
    try {
      const Evaluation ev = evaluate(stamped(result.trajectory), *gt, config.eval.rte_delta,
                                     config.eval.association_dt);
      m.rms_rte = ev.rms_rte;
      m.ate = ev.ate;
      std::cout << fmt::format("rms_rte {:.6f} m (delta {} s), ate {:.6f} m, scale {:.6f}\n",
                               ev.rms_rte, config.eval.rte_delta, ev.ate, ev.alignment.scale);
    } catch (const EvaluationError& e) {
      spdlog::error("evaluation failed: {}", e.what());
      status = kFailure;
    }
  }
  std::ofstream f = open_output(out / "metrics.json");
  write_metrics(f, m);
  return status;
}

struct SynthArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "synth";
  bool no_events = false;
};

int synth(const SynthArgs& a) {
  const Config config = load_config(a.config);
  const SyntheticData data = generate(config.scene, a.seed);
  const fs::path out(a.out);
  ensure_dir(out);

  std::vector<StampedPose> gt;
  for (const auto& s : data.groundtruth) gt.push_back({s.t, s.pose});
  {
    std::ofstream f = open_output(out / "groundtruth.txt");
    write_groundtruth(f, gt);
  }
  {
    std::ofstream f = open_output(out / "tracks.txt");
    write_tracks(f, data.tracks);
  }
  {
    std::map<std::int64_t, Vec3> landmarks;
    for (std::size_t i = 0; i < data.landmarks.size(); ++i) {
      landmarks[static_cast<std::int64_t>(i)] = data.landmarks[i];
    }
    std::ofstream f = open_output(out / "landmarks_gt.txt");
    write_landmarks(f, landmarks);
  }
  if (!a.no_events) {
    const auto events = render_events(config.scene, data, config.render, a.seed + 1);
    std::ofstream f = open_output(out / "events.txt");
    write_events(f, events);
    spdlog::info("synth: {} events", events.size());
  }
  std::ofstream f = open_output(out / "config.ini");
  write_config(f, config);
  spdlog::info("synth: {} tracks over {} landmarks written to {}", data.tracks.size(),
               data.landmarks.size(), out.string());
  return kOk;
}

struct EvalArgs {
  std::string estimate;
  std::string gt;
  double delta = 0.5;
  double max_dt = 0.01;
};

int eval(const EvalArgs& a) {
  const std::vector<MotionState> est = read_trajectory(fs::path(a.estimate));
  const std::vector<StampedPose> gt = read_groundtruth(fs::path(a.gt), true);
  const Evaluation ev = evaluate(stamped(est), gt, a.delta, a.max_dt);
  std::cout << fmt::format("pairs {}\nscale {:.9g}\nate {:.9g}\nrms_rte {:.9g}\ndelta {}\n",
                           ev.pairs, ev.alignment.scale, ev.ate, ev.rms_rte, a.delta);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-time event-camera visual odometry"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  RunArgs run_args;
  CLI::App* run_cmd = app.add_subcommand("run", "run the pipeline over an event file");
  run_cmd->add_option("--config", run_args.config, "INI configuration")->check(CLI::ExistingFile);
  run_cmd->add_option("--events", run_args.events, "event file 't x y polarity'")->required();
  run_cmd->add_option("--gt", run_args.gt, "ground truth 't px py pz qx qy qz qw'");
  run_cmd->add_option("--out", run_args.out, "output directory")->capture_default_str();
  run_cmd->add_option("--threads", run_args.threads, "1 (interleaved) or 2 (producer/consumer)")
      ->check(CLI::IsMember({1, 2}));
  run_cmd->add_flag("--strict", run_args.strict, "abort on the first malformed line");
  run_cmd->add_option("--delta", run_args.delta, "RTE pose-pair separation (s)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth_args;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic fixture");
  synth_cmd->add_option("--config", synth_args.config, "INI configuration ([scene], [camera], [render])")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--seed", synth_args.seed, "random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_args.out, "output directory")->capture_default_str();
  synth_cmd->add_flag("--no-events", synth_args.no_events, "skip rendering the event stream");

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "SIM(3)-aligned RMS RTE and ATE of an estimate");
  eval_cmd->add_option("--estimate", eval_args.estimate, "trajectory file")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--gt", eval_args.gt, "ground truth file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--delta", eval_args.delta, "RTE pose-pair separation (s)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-dt", eval_args.max_dt, "association window (s)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run_cmd) return run(run_args);
    if (*synth_cmd) return synth(synth_args);
    if (*eval_cmd) return eval(eval_args);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kInput;
  } catch (const EstimationError& e) {
    spdlog::error("estimation diverged: {}", e.what());
    return kEstimation;
  } catch (const GpError& e) {
    spdlog::error("estimation diverged: {}", e.what());
    return kEstimation;
  } catch (const LieError& e) {
    spdlog::error("estimation diverged: {}", e.what());
    return kEstimation;
  } catch (const EvaluationError& e) {
    spdlog::error("evaluation failed: {}", e.what());
    return kFailure;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}

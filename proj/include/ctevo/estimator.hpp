// Sliding-window continuous-time estimator: GP prior and projection factors,
// triangulation, Levenberg-Marquardt with landmark elimination, window
// shrinking and marginalization, plus the streaming front door (Estimator).
//
// Cost convention: every factor contributes ||r||^2 (no 1/2), projection
// residuals are whitened by the pixel sigma and pass through a Huber loss.

#pragma once

#include "ctevo/camera.hpp"
#include "ctevo/features.hpp"
#include "ctevo/gp_motion.hpp"
#include "ctevo/marginalization.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctevo {

/// Raised when the solver meets a non-finite residual.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Projection

struct Projection {
  Vec2 pixel = Vec2::Zero();
  Vec2 residual = Vec2::Zero();  // predicted - measured, in pixels
  double depth = 0.0;
  /// False when the point is not in front of the camera by more than min_depth.
  bool valid = false;
  Eigen::Matrix<double, 2, 12> jac_first;
  Eigen::Matrix<double, 2, 12> jac_second;
  Eigen::Matrix<double, 2, 3> jac_landmark;
};

/// Projects a world point seen at time t between two knots. The camera frame
/// is the body frame; world -> camera is T(t)^-1.
Projection project(const MotionState& xk, const MotionState& xk1, const QcModel& qc, double t,
                   const Vec3& landmark, const Vec2& measured, const CameraModel& camera,
                   double min_depth = 0.05);

Projection project(const KnotPair& pair, const InterpolationGains& gains, const Vec3& landmark,
                   const Vec2& measured, const CameraModel& camera, double min_depth = 0.05);

// ---------------------------------------------------------------------------
// Triangulation

struct TriangulationGates {
  double max_rms_px = 3.0;
  double min_parallax_deg = 1.0;
  double min_depth = 0.05;
  double max_depth = 200.0;
};

enum class TriangulationStatus { kOk, kTooFewViews, kDegenerate, kParallax, kCheirality, kReprojection };

std::string to_string(TriangulationStatus status);

struct Triangulation {
  TriangulationStatus status = TriangulationStatus::kTooFewViews;
  Vec3 point = Vec3::Zero();
  double rms_px = std::numeric_limits<double>::infinity();
  double parallax_deg = 0.0;

  bool ok() const { return status == TriangulationStatus::kOk; }
};

/// Linear DLT over all views, refined by Gauss-Newton on the reprojection
/// error. `poses` are body->world poses at the measurement times.
Triangulation triangulate(std::span<const Vec2> pixels, std::span<const Pose> poses,
                          const CameraModel& camera, const TriangulationGates& gates = {});

// ---------------------------------------------------------------------------
// Factor graph

struct GraphParams {
  CameraModel camera;
  QcModel qc;
  double pixel_sigma = 1.0;
  double huber_delta_px = 2.0;
  double min_depth = 0.05;
  /// Strength of the pose prior that fixes the global frame on knot 0.
  double gauge_sigma = 1e-3;
  /// Relative strength of the knot-baseline prior that fixes monocular scale.
  double scale_sigma = 1e-3;
};

/// A triangulated feature trajectory: landmark plus every measurement that
/// falls inside the window, with cached interpolation gains.
struct LandmarkTrack {
  Vec3 p = Vec3::Zero();
  std::vector<Measurement> measurements;
  std::vector<InterpolationGains> gains;
};

struct PriorState {
  MarginalPrior prior;
  /// Linearization point of every knot the prior covers, by knot id.
  std::map<std::int64_t, MotionState> points;
};

/// || |p_second - p_first| - distance || keeps the monocular scale.
struct ScaleAnchor {
  std::int64_t first = 0;
  std::int64_t second = 0;
  double distance = 1.0;
};

class FactorGraph {
 public:
  GraphParams params;
  /// Id of knots.front(); ids grow by one per knot and are never reused.
  std::int64_t first_knot_id = 0;
  std::vector<MotionState> knots;
  std::map<FeatureId, LandmarkTrack> landmarks;
  std::optional<PriorState> prior;
  /// Pose prior on the knot with id 0 while it is in the window.
  std::optional<Pose> gauge;
  std::optional<ScaleAnchor> scale;

  std::int64_t knot_id(std::size_t index) const {
    return first_knot_id + static_cast<std::int64_t>(index);
  }
  std::optional<std::size_t> knot_index(std::int64_t id) const;
  /// k such that t lies in [t_k, t_k+1), or nullopt outside [t_0, t_N).
  std::optional<std::size_t> interval(double t) const;
  /// Body pose at t in [t_0, t_N].
  Pose pose_at(double t) const;

  /// Appends a measurement to a landmark track (times must increase). Returns
  /// false and ignores it when t is outside [t_0, t_N).
  bool add_measurement(FeatureId id, const Measurement& m);
  std::size_t projection_count() const;
  std::size_t factor_count() const;
};

/// Every factor, linearized at the current estimate with robust weights
/// applied. Knots are State(id) with 12 columns, landmarks Landmark(track)
/// with 3.
std::vector<LinearFactor> linearize(const FactorGraph& graph);

struct CostBreakdown {
  double motion_prior = 0.0;
  double projection = 0.0;  // robust
  double marginal = 0.0;
  double gauge = 0.0;
  std::size_t projection_rows = 0;
  std::size_t invalid_projections = 0;

  double total() const { return motion_prior + projection + marginal + gauge; }
};

CostBreakdown evaluate_cost(const FactorGraph& graph);

/// Residual degrees of freedom: residual rows minus estimated parameters.
std::ptrdiff_t residual_dof(const FactorGraph& graph);

struct LmParams {
  double initial_lambda = 1e-4;
  double lambda_factor = 10.0;
  int max_iterations = 50;
  double min_relative_decrease = 1e-6;
  double min_step = 1e-8;
  double max_lambda = 1e10;
};

enum class Termination { kRelativeDecrease, kSmallStep, kMaxIterations, kLambda, kEmpty };

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> accepted_costs;
  Termination termination = Termination::kEmpty;
};

/// Levenberg-Marquardt with H + lambda I damping; landmark blocks are
/// eliminated by Schur complement in every iteration. Throws EstimationError
/// on non-finite residuals.
SolveReport solve(FactorGraph& graph, const LmParams& lm = {});

struct MarginalizationOutcome {
  std::vector<MotionState> knots;       // removed knots, oldest first
  std::vector<FeatureId> trajectories;  // removed landmark tracks
  int damped_blocks = 0;
};

/// Removes the oldest `knots` knots and the listed landmark tracks, folding
/// every factor that touches them into the marginal prior.
MarginalizationOutcome marginalize(FactorGraph& graph, std::size_t knots,
                                   const std::vector<FeatureId>& trajectories);

/// Pairs of distinct landmarks coupled in the current Hessian.
std::vector<std::pair<VariableKey, VariableKey>> landmark_couplings(const FactorGraph& graph);

// ---------------------------------------------------------------------------
// Streaming estimator

struct EstimatorConfig {
  GraphParams graph;
  double knot_spacing = 0.05;
  std::size_t initial_knots = 6;      // N_0
  std::size_t min_window = 5;         // N_min
  std::size_t init_trajectories = 15; // N_init
  /// Hard ceiling on the window size; exceeded windows force marginalization.
  std::size_t max_window = 40;
  TriangulationGates gates;
  std::size_t min_triangulation_views = 3;
  LmParams lm;
  /// Landmarks whose reprojection RMS exceeds this after a solve are dropped.
  double outlier_rms_px = 10.0;
  /// Initialization gives up on a buffer older than this (seconds).
  double init_timeout = 1.0;
};

struct EstimatorSnapshot {
  double time = 0.0;  // latest knot time
  std::vector<MotionState> window;
  std::vector<std::pair<FeatureId, Vec3>> landmarks;
  SolveReport report;
  std::size_t factors = 0;
  double solve_seconds = 0.0;
};

struct EstimatorStats {
  std::size_t solves = 0;
  std::size_t max_window = 0;
  std::size_t max_factors = 0;
  std::size_t marginalized_knots = 0;
  std::size_t marginalized_trajectories = 0;
  std::size_t forced_marginalizations = 0;
  std::size_t dropped_landmarks = 0;
  std::size_t damped_blocks = 0;
  double solve_seconds = 0.0;
  std::vector<std::size_t> window_trace;
  std::vector<double> solve_time_trace;
};

class Estimator {
 public:
  explicit Estimator(EstimatorConfig config);

  using Sink = std::function<void(const EstimatorSnapshot&)>;
  void set_sink(Sink sink) { sink_ = std::move(sink); }

  /// Consumes one trajectory snapshot (raw pixels). Buffers until the window
  /// can be initialized, then extends the window, shrinks it and solves
  /// whenever a measurement passes the newest knot.
  void process(const FeatureTrajectory& snapshot);
  /// Final solve at end of stream.
  void finish();

  bool initialized() const { return initialized_; }
  const FactorGraph& graph() const { return graph_; }
  const EstimatorConfig& config() const { return config_; }
  const EstimatorStats& stats() const { return stats_; }

  /// Every knot estimate in time order: marginalized knots with the estimate
  /// they had when they left the window, then the current window.
  std::vector<MotionState> trajectory() const;
  /// Latest estimate of every landmark that was ever triangulated.
  std::map<FeatureId, Vec3> landmark_map() const;

 private:
  void buffer(const FeatureTrajectory& snapshot);
  bool try_initialize();
  void ingest(const FeatureTrajectory& snapshot);
  bool extend_to(double t);
  void try_triangulate(FeatureId id);
  void clip_pending();
  void step();
  void drop_outliers();
  void emit(const SolveReport& report, double seconds);

  EstimatorConfig config_;
  FactorGraph graph_;
  Sink sink_;
  EstimatorStats stats_;
  bool initialized_ = false;

  // before initialization
  std::map<FeatureId, FeatureTrajectory> buffer_;
  double buffer_start_ = std::numeric_limits<double>::infinity();
  double buffer_latest_ = -std::numeric_limits<double>::infinity();
  double last_attempt_ = -std::numeric_limits<double>::infinity();

  // after initialization
  std::map<FeatureId, std::vector<Measurement>> pending_;
  std::set<FeatureId> retired_;
  std::vector<MotionState> history_;
  std::map<FeatureId, Vec3> retired_landmarks_;
};

}  // namespace ctevo

// Linearized factors, Schur-complement marginalization and the dynamic
// window-shrinking rule.
//
// A linear factor contributes ||sum_i J_i dx_i + r||^2 to the cost, so the
// normal equations are H dx = -b with H = J^T J and b = J^T r.

#pragma once

#include "ctevo/features.hpp"

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

namespace ctevo {

/// Identifies an optimization variable: a trajectory knot or a landmark.
struct VariableKey {
  enum class Kind : std::uint8_t { kState = 0, kLandmark = 1 };
  Kind kind = Kind::kState;
  std::int64_t id = 0;

  static VariableKey State(std::int64_t id) { return {Kind::kState, id}; }
  static VariableKey Landmark(std::int64_t id) { return {Kind::kLandmark, id}; }
  bool is_landmark() const { return kind == Kind::kLandmark; }
  auto operator<=>(const VariableKey&) const = default;
};

struct LinearFactor {
  std::vector<VariableKey> keys;
  std::vector<Eigen::MatrixXd> jacobians;  // one block per key, same row count
  Eigen::VectorXd residual;

  Eigen::Index rows() const { return residual.size(); }
};

/// Gaussian information over retained variables, stored both as (H, b) and
/// as an equivalent square-root factor ||J dx + r||^2 (up to a constant).
struct MarginalPrior {
  std::vector<VariableKey> keys;
  std::vector<int> dims;
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  Eigen::MatrixXd sqrt_information;  // J, rows = numerical rank of H
  Eigen::VectorXd sqrt_residual;     // r

  bool empty() const { return keys.empty(); }
  int dim() const;
  /// The prior as a linear factor at its linearization point.
  LinearFactor as_factor() const;
};

struct MarginalizationResult {
  MarginalPrior prior;
  /// Eliminated blocks that needed damping because they were rank deficient.
  int damped_blocks = 0;
};

/// Dense normal equations over an explicit variable ordering.
struct DenseSystem {
  std::vector<VariableKey> order;
  std::map<VariableKey, Eigen::Index> offset;
  std::map<VariableKey, int> dim;
  Eigen::MatrixXd H;
  Eigen::VectorXd b;
  double cost = 0.0;  // sum of squared residuals at dx = 0
};

/// Assembles the factors. Variables missing from `order` are appended in
/// key order.
DenseSystem assemble(const std::vector<LinearFactor>& factors,
                     std::vector<VariableKey> order = {});

/// Minimizer of a dense system (H dx = -b); throws if H is singular.
Eigen::VectorXd solve_dense(const DenseSystem& system);

/// Eliminates `marginalized` from the linearized Markov blanket `blanket`:
/// landmark blocks first, then state blocks, by Schur complement. Every
/// variable of the blanket that is not marginalized ends up in the prior.
/// Rank-deficient eliminated blocks receive 1e-8 I and a warning.
MarginalizationResult marginalize(const std::vector<LinearFactor>& blanket,
                                  const std::set<VariableKey>& marginalized);

/// Pairs of distinct landmarks coupled by some factor. Empty means the
/// Hessian keeps its arrow shape.
std::vector<std::pair<VariableKey, VariableKey>> landmark_couplings(
    const std::vector<LinearFactor>& factors);

// ---------------------------------------------------------------------------
// Dynamic window shrinking

struct TrackView {
  FeatureId id = 0;
  std::span<const Measurement> measurements;
};

struct MarginalizationPlan {
  /// Number of leading knots to marginalize.
  std::size_t knots = 0;
  std::vector<FeatureId> trajectories;

  bool empty() const { return knots == 0 && trajectories.empty(); }
};

/// Marks feature trajectories that start in [t_0, t_1) and end before
/// t_eps = 0.2 t_0 + 0.8 t_N, then marks knots front to back while every
/// trajectory with a measurement in [t_k, t_k+1) is already marked. Knot
/// marking stops before the window would hold fewer than `n_min` knots.
MarginalizationPlan dynamic_marginalization(std::span<const double> knot_times,
                                            std::span<const TrackView> trajectories,
                                            std::size_t n_min);

}  // namespace ctevo

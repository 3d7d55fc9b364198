#include "ctevo/marginalization.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <stdexcept>

namespace ctevo {

int MarginalPrior::dim() const {
  int n = 0;
  for (int d : dims) n += d;
  return n;
}

LinearFactor MarginalPrior::as_factor() const {
  LinearFactor f;
  f.keys = keys;
  f.residual = sqrt_residual;
  Eigen::Index col = 0;
  for (int d : dims) {
    f.jacobians.push_back(sqrt_information.middleCols(col, d));
    col += d;
  }
  return f;
}

DenseSystem assemble(const std::vector<LinearFactor>& factors, std::vector<VariableKey> order) {
  DenseSystem sys;
  std::map<VariableKey, int> dims;
  for (const auto& f : factors) {
    if (f.keys.size() != f.jacobians.size()) {
      throw std::invalid_argument("assemble: factor keys and jacobians differ in count");
    }
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
      if (f.jacobians[i].rows() != f.rows()) {
        throw std::invalid_argument("assemble: jacobian row count mismatch");
      }
      const int d = static_cast<int>(f.jacobians[i].cols());
      auto [it, inserted] = dims.emplace(f.keys[i], d);
      if (!inserted && it->second != d) {
        throw std::invalid_argument("assemble: inconsistent variable dimension");
      }
    }
  }
  std::set<VariableKey> seen(order.begin(), order.end());
  for (const auto& [key, d] : dims) {
    if (!seen.count(key)) order.push_back(key);
  }
  Eigen::Index n = 0;
  for (const auto& key : order) {
    auto it = dims.find(key);
    if (it == dims.end()) continue;  // ordered but unused
    sys.order.push_back(key);
    sys.offset[key] = n;
    sys.dim[key] = it->second;
    n += it->second;
  }
  sys.H = Eigen::MatrixXd::Zero(n, n);
  sys.b = Eigen::VectorXd::Zero(n);
  for (const auto& f : factors) {
    sys.cost += f.residual.squaredNorm();
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
      const Eigen::Index oi = sys.offset.at(f.keys[i]);
      const auto& ji = f.jacobians[i];
      sys.b.segment(oi, ji.cols()) += ji.transpose() * f.residual;
      for (std::size_t j = 0; j < f.keys.size(); ++j) {
        const Eigen::Index oj = sys.offset.at(f.keys[j]);
        const auto& jj = f.jacobians[j];
        sys.H.block(oi, oj, ji.cols(), jj.cols()) += ji.transpose() * jj;
      }
    }
  }
  return sys;
}

Eigen::VectorXd solve_dense(const DenseSystem& system) {
  const Eigen::LLT<Eigen::MatrixXd> llt(system.H);
  if (llt.info() != Eigen::Success) throw std::runtime_error("solve_dense: singular system");
  return llt.solve(-system.b);
}

namespace {

// Inverse of a symmetric block, damping it first when it is rank deficient.
Eigen::MatrixXd guarded_inverse(Eigen::MatrixXd block, const char* what, int* damped) {
  constexpr double kDamping = 1e-8;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
  const double largest = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() <= 1e-12 * largest) {
    spdlog::warn("marginalize: rank-deficient {} block (min eigenvalue {:.3e}), damping by {:.0e}",
                 what, eig.eigenvalues().minCoeff(), kDamping);
    block.diagonal().array() += kDamping;
    ++*damped;
  }
  const Eigen::Index n = block.rows();
  return block.ldlt().solve(Eigen::MatrixXd::Identity(n, n));
}

}  // namespace

MarginalizationResult marginalize(const std::vector<LinearFactor>& blanket,
                                  const std::set<VariableKey>& marginalized) {
  std::vector<VariableKey> landmarks;
  std::vector<VariableKey> states;
  std::vector<VariableKey> retained;
  std::set<VariableKey> all;
  for (const auto& f : blanket) all.insert(f.keys.begin(), f.keys.end());
  for (const auto& key : marginalized) {
    if (!all.count(key)) continue;  // nothing to eliminate
    (key.is_landmark() ? landmarks : states).push_back(key);
  }
  for (const auto& key : all) {
    if (!marginalized.count(key)) retained.push_back(key);
  }
  std::vector<VariableKey> order = landmarks;
  order.insert(order.end(), states.begin(), states.end());
  order.insert(order.end(), retained.begin(), retained.end());
  const DenseSystem sys = assemble(blanket, order);

  MarginalizationResult result;
  Eigen::Index n_l = 0;
  for (const auto& k : landmarks) n_l += sys.dim.at(k);
  Eigen::Index n_s = 0;
  for (const auto& k : states) n_s += sys.dim.at(k);
  const Eigen::Index n = sys.H.rows();

  // 1. landmarks, block by block when they are mutually independent
  const Eigen::Index n_rest = n - n_l;
  Eigen::MatrixXd H = sys.H.bottomRightCorner(n_rest, n_rest);
  Eigen::VectorXd b = sys.b.tail(n_rest);
  if (n_l > 0) {
    const bool block_diagonal = [&] {
      for (const auto& [a, c] : landmark_couplings(blanket)) {
        if (marginalized.count(a) && marginalized.count(c)) return false;
      }
      return true;
    }();
    if (block_diagonal) {
      for (const auto& k : landmarks) {
        const Eigen::Index o = sys.offset.at(k);
        const int d = sys.dim.at(k);
        const Eigen::MatrixXd inv = guarded_inverse(sys.H.block(o, o, d, d), "landmark", &result.damped_blocks);
        const Eigen::MatrixXd w = sys.H.block(n_l, o, n_rest, d);
        const Eigen::MatrixXd w_inv = w * inv;
        H.noalias() -= w_inv * w.transpose();
        b.noalias() -= w_inv * sys.b.segment(o, d);
      }
    } else {
      const Eigen::MatrixXd inv = guarded_inverse(sys.H.topLeftCorner(n_l, n_l), "landmark", &result.damped_blocks);
      const Eigen::MatrixXd w = sys.H.bottomLeftCorner(n_rest, n_l);
      const Eigen::MatrixXd w_inv = w * inv;
      H.noalias() -= w_inv * w.transpose();
      b.noalias() -= w_inv * sys.b.head(n_l);
    }
  }

  // 2. states
  const Eigen::Index n_r = n_rest - n_s;
  Eigen::MatrixXd Hr = H.bottomRightCorner(n_r, n_r);
  Eigen::VectorXd br = b.tail(n_r);
  if (n_s > 0) {
    const Eigen::MatrixXd inv = guarded_inverse(H.topLeftCorner(n_s, n_s), "state", &result.damped_blocks);
    const Eigen::MatrixXd w = H.bottomLeftCorner(n_r, n_s);
    const Eigen::MatrixXd w_inv = w * inv;
    Hr.noalias() -= w_inv * w.transpose();
    br.noalias() -= w_inv * b.head(n_s);
  }
  Hr = 0.5 * (Hr + Hr.transpose());

  MarginalPrior& prior = result.prior;
  prior.keys = retained;
  for (const auto& k : retained) prior.dims.push_back(sys.dim.at(k));
  prior.H = Hr;
  prior.b = br;
  if (n_r > 0) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Hr);
    const Eigen::VectorXd& s = eig.eigenvalues();
    const double floor = 1e-14 * std::max(1.0, s.maxCoeff());
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s(i) > floor) keep.push_back(i);
    }
    prior.sqrt_information.resize(static_cast<Eigen::Index>(keep.size()), n_r);
    prior.sqrt_residual.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      const Eigen::Index i = keep[r];
      const double root = std::sqrt(s(i));
      const auto row = static_cast<Eigen::Index>(r);
      prior.sqrt_information.row(row) = root * eig.eigenvectors().col(i).transpose();
      prior.sqrt_residual(row) = eig.eigenvectors().col(i).dot(br) / root;
    }
  }
  return result;
}

std::vector<std::pair<VariableKey, VariableKey>> landmark_couplings(
    const std::vector<LinearFactor>& factors) {
  std::set<std::pair<VariableKey, VariableKey>> pairs;
  for (const auto& f : factors) {
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
      if (!f.keys[i].is_landmark()) continue;
      for (std::size_t j = i + 1; j < f.keys.size(); ++j) {
        if (!f.keys[j].is_landmark() || f.keys[i] == f.keys[j]) continue;
        pairs.insert(std::minmax(f.keys[i], f.keys[j]));
      }
    }
  }
  return {pairs.begin(), pairs.end()};
}

MarginalizationPlan dynamic_marginalization(std::span<const double> knot_times,
                                            std::span<const TrackView> trajectories,
                                            std::size_t n_min) {
  MarginalizationPlan plan;
  const std::size_t n = knot_times.size();
  if (n < 2) return plan;
  const double t0 = knot_times[0];
  const double t1 = knot_times[1];
  const double t_eps = 0.2 * t0 + 0.8 * knot_times[n - 1];

  std::vector<bool> marked(trajectories.size(), false);
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& m = trajectories[i].measurements;
    if (m.empty()) continue;
    if (m.back().t < t_eps && t0 <= m.front().t && m.front().t < t1) {
      marked[i] = true;
      plan.trajectories.push_back(trajectories[i].id);
    }
  }

  for (std::size_t k = 0; k + 1 < n; ++k) {
    if (n - plan.knots - 1 < n_min) break;
    const double lo = knot_times[k];
    const double hi = knot_times[k + 1];
    bool associated = false;
    for (std::size_t i = 0; i < trajectories.size() && !associated; ++i) {
      if (marked[i]) continue;
      const auto& m = trajectories[i].measurements;
      const auto it = std::lower_bound(m.begin(), m.end(), lo,
                                       [](const Measurement& a, double t) { return a.t < t; });
      associated = it != m.end() && it->t < hi;
    }
    if (associated) break;
    ++plan.knots;
  }
  return plan;
}

}  // namespace ctevo

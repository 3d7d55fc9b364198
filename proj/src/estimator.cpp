#include "ctevo/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <opencv2/calib3d.hpp>
#include <opencv2/core.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace ctevo {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

using Mat2x6 = Eigen::Matrix<double, 2, 6>;
using Mat3x6 = Eigen::Matrix<double, 3, 6>;

// Huber loss on a squared whitened norm.
double huber(double squared, double k) {
  const double n = std::sqrt(squared);
  return n <= k ? squared : 2.0 * k * n - k * k;
}

// sqrt of the IRLS weight for a residual of norm n.
double huber_scale(double n, double k) { return n <= k ? 1.0 : std::sqrt(k / n); }

// Knot perturbation that takes `from` to `to`.
Vec12 box_minus(const MotionState& to, const MotionState& from) {
  Vec12 d;
  d << se3_log(from.pose.inverse() * to.pose), to.velocity - from.velocity;
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Projection

Projection project(const KnotPair& pair, const InterpolationGains& gains, const Vec3& landmark,
                   const Vec2& measured, const CameraModel& camera, double min_depth) {
  const PoseQuery q = interpolate_pose(pair, gains);
  const Mat3& r = q.pose.rotation();
  const Vec3 pc = r.transpose() * (landmark - q.pose.translation());
  Projection out;
  out.depth = pc.z();
  out.valid = pc.z() > min_depth;
  out.jac_first.setZero();
  out.jac_second.setZero();
  out.jac_landmark.setZero();
  if (!out.valid) return out;
  out.pixel = camera.project(pc);
  out.residual = out.pixel - measured;
  const Eigen::Matrix<double, 2, 3> jp = camera.project_jacobian(pc);
  Mat3x6 d_pc;
  d_pc << -Mat3::Identity(), lie::skew<double>(pc);
  const Mat2x6 j_pose = jp * d_pc;
  out.jac_first = j_pose * q.jacobian.leftCols<12>();
  out.jac_second = j_pose * q.jacobian.rightCols<12>();
  out.jac_landmark = jp * r.transpose();
  return out;
}

Projection project(const MotionState& xk, const MotionState& xk1, const QcModel& qc, double t,
                   const Vec3& landmark, const Vec2& measured, const CameraModel& camera,
                   double min_depth) {
  if (t < xk.t || t > xk1.t) throw GpError("project: time outside knot interval");
  return project(prepare_pair(xk, xk1), interpolation_gains(t - xk.t, xk1.t - xk.t, qc), landmark,
                 measured, camera, min_depth);
}

// ---------------------------------------------------------------------------
// Triangulation

std::string to_string(TriangulationStatus status) {
  switch (status) {
    case TriangulationStatus::kOk: return "ok";
    case TriangulationStatus::kTooFewViews: return "too few views";
    case TriangulationStatus::kDegenerate: return "degenerate";
    case TriangulationStatus::kParallax: return "insufficient parallax";
    case TriangulationStatus::kCheirality: return "cheirality";
    case TriangulationStatus::kReprojection: return "reprojection";
  }
  return "unknown";
}

Triangulation triangulate(std::span<const Vec2> pixels, std::span<const Pose> poses,
                          const CameraModel& camera, const TriangulationGates& gates) {
  Triangulation out;
  const std::size_t n = pixels.size();
  if (n < 2 || poses.size() != n) return out;

  std::vector<Vec3> rays(n);
  for (std::size_t i = 0; i < n; ++i) rays[i] = poses[i].rotation() * camera.bearing(pixels[i]);
  double max_cos = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) max_cos = std::min(max_cos, rays[i].dot(rays[j]));
  }
  out.parallax_deg = std::acos(std::clamp(max_cos, -1.0, 1.0)) * kRadToDeg;
  if (out.parallax_deg <= gates.min_parallax_deg) {
    out.status = TriangulationStatus::kParallax;
    return out;
  }

  Eigen::MatrixXd a(2 * n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 x = camera.normalize(pixels[i]);
    Eigen::Matrix<double, 3, 4> p;
    p << poses[i].rotation().transpose(), -poses[i].rotation().transpose() * poses[i].translation();
    const auto row = static_cast<Eigen::Index>(2 * i);
    a.row(row) = x.x() * p.row(2) - p.row(0);
    a.row(row + 1) = x.y() * p.row(2) - p.row(1);
    a.row(row).normalize();
    a.row(row + 1).normalize();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12 * h.head<3>().norm()) {
    out.status = TriangulationStatus::kDegenerate;
    return out;
  }
  Vec3 x = h.head<3>() / h(3);

  auto depths_ok = [&](const Vec3& point) {
    for (std::size_t i = 0; i < n; ++i) {
      const double z = (poses[i].rotation().transpose() * (point - poses[i].translation())).z();
      if (!(z > gates.min_depth && z < gates.max_depth)) return false;
    }
    return true;
  };
  if (!depths_ok(x)) {
    out.status = TriangulationStatus::kCheirality;
    return out;
  }

  // Gauss-Newton on the reprojection error
  auto reprojection = [&](const Vec3& point, Mat3* h_out, Vec3* g_out) {
    double sq = 0.0;
    Mat3 hh = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const Mat3 rt = poses[i].rotation().transpose();
      const Vec3 pc = rt * (point - poses[i].translation());
      const Vec2 r = camera.project(pc) - pixels[i];
      sq += r.squaredNorm();
      const Eigen::Matrix<double, 2, 3> j = camera.project_jacobian(pc) * rt;
      hh += j.transpose() * j;
      g += j.transpose() * r;
    }
    if (h_out) *h_out = hh;
    if (g_out) *g_out = g;
    return sq;
  };
  Mat3 hh;
  Vec3 g;
  double sq = reprojection(x, &hh, &g);
  for (int it = 0; it < 20; ++it) {
    const Vec3 dx = hh.ldlt().solve(-g);
    if (!dx.allFinite()) break;
    const Vec3 candidate = x + dx;
    Mat3 hc;
    Vec3 gc;
    const double sc = depths_ok(candidate) ? reprojection(candidate, &hc, &gc) : sq + 1.0;
    if (sc >= sq) break;
    x = candidate;
    hh = hc;
    g = gc;
    const double decrease = sq - sc;
    sq = sc;
    if (dx.norm() < 1e-12 * (1.0 + x.norm()) || decrease < 1e-15 * (1.0 + sq)) break;
  }
  out.point = x;
  out.rms_px = std::sqrt(sq / static_cast<double>(n));
  out.status = out.rms_px < gates.max_rms_px ? TriangulationStatus::kOk
                                             : TriangulationStatus::kReprojection;
  return out;
}

// ---------------------------------------------------------------------------
// Factor graph

std::optional<std::size_t> FactorGraph::knot_index(std::int64_t id) const {
  const std::int64_t i = id - first_knot_id;
  if (i < 0 || i >= static_cast<std::int64_t>(knots.size())) return std::nullopt;
  return static_cast<std::size_t>(i);
}

std::optional<std::size_t> FactorGraph::interval(double t) const {
  if (knots.size() < 2 || t < knots.front().t || t >= knots.back().t) return std::nullopt;
  const auto it = std::upper_bound(knots.begin(), knots.end(), t,
                                   [](double v, const MotionState& k) { return v < k.t; });
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

Pose FactorGraph::pose_at(double t) const {
  if (knots.empty()) throw std::logic_error("pose_at: empty window");
  if (t == knots.back().t) return knots.back().pose;
  const auto k = interval(t);
  if (!k) throw std::out_of_range("pose_at: time outside window");
  const MotionState& a = knots[*k];
  const MotionState& b = knots[*k + 1];
  return interpolate_pose(a, b, interpolation_gains(t - a.t, b.t - a.t, params.qc));
}

bool FactorGraph::add_measurement(FeatureId id, const Measurement& m) {
  const auto k = interval(m.t);
  if (!k) return false;
  LandmarkTrack& track = landmarks.at(id);
  if (!track.measurements.empty() && m.t <= track.measurements.back().t) {
    throw std::invalid_argument("add_measurement: times must increase");
  }
  const MotionState& a = knots[*k];
  const MotionState& b = knots[*k + 1];
  track.measurements.push_back(m);
  track.gains.push_back(interpolation_gains(m.t - a.t, b.t - a.t, params.qc));
  return true;
}

std::size_t FactorGraph::projection_count() const {
  std::size_t n = 0;
  for (const auto& [id, track] : landmarks) n += track.measurements.size();
  return n;
}

std::size_t FactorGraph::factor_count() const {
  std::size_t n = projection_count();
  if (knots.size() > 1) n += knots.size() - 1;
  if (prior) ++n;
  if (gauge && knot_index(0)) ++n;
  if (scale && knot_index(scale->first) && knot_index(scale->second)) ++n;
  return n;
}

namespace {

using Key = VariableKey;

Key state_key(const FactorGraph& g, std::size_t index) { return Key::State(g.knot_id(index)); }

std::optional<LinearFactor> prior_factor(const FactorGraph& g) {
  if (!g.prior || g.prior->prior.empty()) return std::nullopt;
  const MarginalPrior& mp = g.prior->prior;
  LinearFactor f;
  f.keys = mp.keys;
  f.residual = mp.sqrt_residual;
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < mp.keys.size(); ++i) {
    const auto idx = g.knot_index(mp.keys[i].id);
    if (!idx || mp.dims[i] != 12) throw std::logic_error("marginal prior refers to a missing knot");
    const Vec12 d = box_minus(g.knots[*idx], g.prior->points.at(mp.keys[i].id));
    Mat12 m = Mat12::Identity();
    m.topLeftCorner<6, 6>() = right_jacobian_inverse(d.head<6>());
    const auto block = mp.sqrt_information.middleCols(col, 12);
    f.residual += block * d;
    f.jacobians.push_back(block * m);
    col += 12;
  }
  return f;
}

std::optional<LinearFactor> gauge_factor(const FactorGraph& g) {
  const auto idx = g.knot_index(0);
  if (!g.gauge || !idx) return std::nullopt;
  const double w = 1.0 / g.params.gauge_sigma;
  const Twist e = se3_log(g.gauge->inverse() * g.knots[*idx].pose);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(6, 12);
  j.leftCols<6>() = w * right_jacobian_inverse(e);
  return LinearFactor{{Key::State(0)}, {j}, w * e};
}

std::optional<LinearFactor> scale_factor(const FactorGraph& g) {
  if (!g.scale) return std::nullopt;
  const auto a = g.knot_index(g.scale->first);
  const auto b = g.knot_index(g.scale->second);
  if (!a || !b) return std::nullopt;
  const Pose& pa = g.knots[*a].pose;
  const Pose& pb = g.knots[*b].pose;
  const Vec3 d = pb.translation() - pa.translation();
  const double n = d.norm();
  const double w = 1.0 / (g.params.scale_sigma * g.scale->distance);
  const Vec3 u = n > 0.0 ? Vec3(d / n) : Vec3::UnitX();
  Eigen::MatrixXd ja = Eigen::MatrixXd::Zero(1, 12);
  Eigen::MatrixXd jb = Eigen::MatrixXd::Zero(1, 12);
  ja.leftCols<3>() = -w * u.transpose() * pa.rotation();
  jb.leftCols<3>() = w * u.transpose() * pb.rotation();
  return LinearFactor{{Key::State(g.scale->first), Key::State(g.scale->second)},
                      {ja, jb},
                      Eigen::VectorXd::Constant(1, w * (n - g.scale->distance))};
}

std::vector<LinearFactor> linearize_impl(const FactorGraph& g, bool with_prior) {
  std::vector<LinearFactor> out;
  const std::size_t n = g.knots.size();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const PriorResidual pr = whitened_prior_residual(g.knots[k], g.knots[k + 1], g.params.qc);
    out.push_back({{state_key(g, k), state_key(g, k + 1)}, {pr.jac_first, pr.jac_second}, pr.residual});
  }

  std::vector<std::optional<KnotPair>> pairs(n > 0 ? n - 1 : 0);
  const double sigma = g.params.pixel_sigma;
  const double k_huber = g.params.huber_delta_px / sigma;
  for (const auto& [id, track] : g.landmarks) {
    for (std::size_t i = 0; i < track.measurements.size(); ++i) {
      const Measurement& m = track.measurements[i];
      const auto k = g.interval(m.t);
      if (!k) throw std::logic_error("linearize: measurement outside the window");
      if (!pairs[*k]) pairs[*k] = prepare_pair(g.knots[*k], g.knots[*k + 1]);
      const Projection p = project(*pairs[*k], track.gains[i], track.p, m.q, g.params.camera,
                                   g.params.min_depth);
      if (!p.valid) continue;
      const Vec2 e = p.residual / sigma;
      const double s = huber_scale(e.norm(), k_huber) / sigma;
      out.push_back({{state_key(g, *k), state_key(g, *k + 1), Key::Landmark(id)},
                     {s * p.jac_first, s * p.jac_second, s * p.jac_landmark},
                     s * p.residual});
    }
  }
  if (with_prior) {
    if (auto f = prior_factor(g)) out.push_back(std::move(*f));
  }
  if (auto f = gauge_factor(g)) out.push_back(std::move(*f));
  if (auto f = scale_factor(g)) out.push_back(std::move(*f));
  return out;
}

}  // namespace

std::vector<LinearFactor> linearize(const FactorGraph& graph) { return linearize_impl(graph, true); }

CostBreakdown evaluate_cost(const FactorGraph& g) {
  CostBreakdown c;
  const std::size_t n = g.knots.size();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    c.motion_prior +=
        whitened_prior_residual(g.knots[k], g.knots[k + 1], g.params.qc).residual.squaredNorm();
  }
  const double sigma = g.params.pixel_sigma;
  const double k_huber = g.params.huber_delta_px / sigma;
  for (const auto& [id, track] : g.landmarks) {
    for (std::size_t i = 0; i < track.measurements.size(); ++i) {
      const Measurement& m = track.measurements[i];
      const auto k = g.interval(m.t);
      if (!k) throw std::logic_error("evaluate_cost: measurement outside the window");
      const Pose pose = interpolate_pose(g.knots[*k], g.knots[*k + 1], track.gains[i]);
      const Vec3 pc = pose.rotation().transpose() * (track.p - pose.translation());
      if (!(pc.z() > g.params.min_depth)) {
        ++c.invalid_projections;
        continue;
      }
      const Vec2 e = (g.params.camera.project(pc) - m.q) / sigma;
      c.projection += huber(e.squaredNorm(), k_huber);
      c.projection_rows += 2;
    }
  }
  if (auto f = prior_factor(g)) c.marginal = f->residual.squaredNorm();
  if (auto f = gauge_factor(g)) c.gauge += f->residual.squaredNorm();
  if (auto f = scale_factor(g)) c.gauge += f->residual.squaredNorm();
  return c;
}

std::ptrdiff_t residual_dof(const FactorGraph& g) {
  std::ptrdiff_t rows = 0;
  for (const auto& f : linearize(g)) rows += f.rows();
  const auto params = static_cast<std::ptrdiff_t>(12 * g.knots.size() + 3 * g.landmarks.size());
  return rows - params;
}

std::vector<std::pair<VariableKey, VariableKey>> landmark_couplings(const FactorGraph& graph) {
  return landmark_couplings(linearize(graph));
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

namespace {

// Normal equations split into a dense knot block and per-landmark blocks.
struct NormalEquations {
  Eigen::Index n_s = 0;
  Eigen::MatrixXd h_ss;
  Eigen::VectorXd b_s;
  struct Landmark {
    FeatureId id = 0;
    Mat3 h = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    Eigen::MatrixXd w;  // n_s x 3
    Eigen::Index r0 = 0;
    Eigen::Index r1 = 0;  // rows [r0, r1) of w are non-zero
  };
  std::vector<Landmark> landmarks;
};

NormalEquations build_normal_equations(const FactorGraph& g, const std::vector<LinearFactor>& factors) {
  NormalEquations ne;
  ne.n_s = static_cast<Eigen::Index>(12 * g.knots.size());
  ne.h_ss = Eigen::MatrixXd::Zero(ne.n_s, ne.n_s);
  ne.b_s = Eigen::VectorXd::Zero(ne.n_s);
  std::map<FeatureId, std::size_t> lm_index;
  for (const auto& [id, track] : g.landmarks) {
    lm_index[id] = ne.landmarks.size();
    NormalEquations::Landmark l;
    l.id = id;
    l.w = Eigen::MatrixXd::Zero(ne.n_s, 3);
    l.r0 = ne.n_s;
    l.r1 = 0;
    ne.landmarks.push_back(std::move(l));
  }
  auto state_offset = [&](const Key& k) {
    const auto idx = g.knot_index(k.id);
    if (!idx) throw std::logic_error("factor refers to a knot outside the window");
    return static_cast<Eigen::Index>(12 * *idx);
  };
  for (const auto& f : factors) {
    for (std::size_t i = 0; i < f.keys.size(); ++i) {
      const auto& ji = f.jacobians[i];
      if (f.keys[i].is_landmark()) {
        auto& l = ne.landmarks[lm_index.at(f.keys[i].id)];
        l.b += ji.transpose() * f.residual;
        for (std::size_t j = 0; j < f.keys.size(); ++j) {
          if (!f.keys[j].is_landmark()) continue;
          if (f.keys[j] != f.keys[i]) throw std::logic_error("landmark-landmark coupling");
          l.h += ji.transpose() * f.jacobians[j];
        }
        continue;
      }
      const Eigen::Index oi = state_offset(f.keys[i]);
      ne.b_s.segment(oi, 12) += ji.transpose() * f.residual;
      for (std::size_t j = 0; j < f.keys.size(); ++j) {
        const auto& jj = f.jacobians[j];
        if (f.keys[j].is_landmark()) {
          auto& l = ne.landmarks[lm_index.at(f.keys[j].id)];
          l.w.middleRows(oi, 12) += ji.transpose() * jj;
          l.r0 = std::min(l.r0, oi);
          l.r1 = std::max(l.r1, oi + 12);
        } else {
          ne.h_ss.block(oi, state_offset(f.keys[j]), 12, 12) += ji.transpose() * jj;
        }
      }
    }
  }
  return ne;
}

// Solves (H + lambda I) dx = -b with the landmarks eliminated first.
std::optional<std::pair<Eigen::VectorXd, std::vector<Vec3>>> solve_damped(const NormalEquations& ne,
                                                                         double lambda) {
  Eigen::MatrixXd s = ne.h_ss;
  s.diagonal().array() += lambda;
  Eigen::VectorXd g = ne.b_s;
  std::vector<Mat3> c_inv(ne.landmarks.size());
  for (std::size_t i = 0; i < ne.landmarks.size(); ++i) {
    const auto& l = ne.landmarks[i];
    const Mat3 c = l.h + lambda * Mat3::Identity();
    bool invertible = false;
    c.computeInverseWithCheck(c_inv[i], invertible);
    if (!invertible) return std::nullopt;
    if (l.r1 <= l.r0) continue;
    const Eigen::Index len = l.r1 - l.r0;
    const Eigen::MatrixXd w = l.w.middleRows(l.r0, len);
    const Eigen::MatrixXd wc = w * c_inv[i];
    s.block(l.r0, l.r0, len, len).noalias() -= wc * w.transpose();
    g.segment(l.r0, len).noalias() -= wc * l.b;
  }
  Eigen::VectorXd xs = Eigen::VectorXd::Zero(ne.n_s);
  if (ne.n_s > 0) {
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    xs = ldlt.solve(-g);
    if (!xs.allFinite()) return std::nullopt;
  }
  std::vector<Vec3> xl(ne.landmarks.size());
  for (std::size_t i = 0; i < ne.landmarks.size(); ++i) {
    const auto& l = ne.landmarks[i];
    Vec3 rhs = -l.b;
    if (l.r1 > l.r0) rhs -= l.w.middleRows(l.r0, l.r1 - l.r0).transpose() * xs.segment(l.r0, l.r1 - l.r0);
    xl[i] = c_inv[i] * rhs;
    if (!xl[i].allFinite()) return std::nullopt;
  }
  return std::make_pair(std::move(xs), std::move(xl));
}

double checked_cost(const FactorGraph& g) {
  const double c = evaluate_cost(g).total();
  if (!std::isfinite(c)) {
    std::string msg = "non-finite cost; window [" + std::to_string(g.knots.front().t) + ", " +
                      std::to_string(g.knots.back().t) + "], " + std::to_string(g.knots.size()) +
                      " knots, " + std::to_string(g.landmarks.size()) + " landmarks";
    for (std::size_t k = 0; k < g.knots.size(); ++k) {
      if (!g.knots[k].pose.matrix().allFinite() || !g.knots[k].velocity.allFinite()) {
        msg += "; knot " + std::to_string(g.knot_id(k)) + " not finite";
      }
    }
    throw EstimationError(msg);
  }
  return c;
}

}  // namespace

SolveReport solve(FactorGraph& graph, const LmParams& lm) {
  SolveReport report;
  if (graph.knots.empty()) return report;
  double cost = checked_cost(graph);
  report.initial_cost = cost;
  report.final_cost = cost;
  report.accepted_costs.push_back(cost);

  double lambda = lm.initial_lambda;
  NormalEquations ne = build_normal_equations(graph, linearize(graph));
  report.termination = Termination::kMaxIterations;
  while (report.iterations < lm.max_iterations) {
    ++report.iterations;
    const auto step = solve_damped(ne, lambda);
    if (!step) {
      lambda *= lm.lambda_factor;
      if (lambda > lm.max_lambda) {
        report.termination = Termination::kLambda;
        break;
      }
      continue;
    }
    const auto& [xs, xl] = *step;
    double norm2 = xs.squaredNorm();
    for (const auto& v : xl) norm2 += v.squaredNorm();
    if (std::sqrt(norm2) < lm.min_step) {
      report.termination = Termination::kSmallStep;
      break;
    }

    const std::vector<MotionState> saved_knots = graph.knots;
    std::vector<Vec3> saved_points;
    saved_points.reserve(graph.landmarks.size());
    for (std::size_t k = 0; k < graph.knots.size(); ++k) {
      const auto o = static_cast<Eigen::Index>(12 * k);
      graph.knots[k].pose = graph.knots[k].pose * se3_exp(xs.segment<6>(o));
      graph.knots[k].pose.normalize();
      graph.knots[k].velocity += xs.segment<6>(o + 6);
    }
    std::size_t i = 0;
    for (auto& [id, track] : graph.landmarks) {
      saved_points.push_back(track.p);
      track.p += xl[i++];
    }

    const double candidate = evaluate_cost(graph).total();
    if (std::isfinite(candidate) && candidate < cost) {
      const double relative = (cost - candidate) / std::max(cost, 1e-300);
      cost = candidate;
      report.accepted_costs.push_back(cost);
      lambda = std::max(lambda / lm.lambda_factor, 1e-15);
      if (relative < lm.min_relative_decrease) {
        report.termination = Termination::kRelativeDecrease;
        break;
      }
      ne = build_normal_equations(graph, linearize(graph));
    } else {
      graph.knots = saved_knots;
      i = 0;
      for (auto& [id, track] : graph.landmarks) track.p = saved_points[i++];
      lambda *= lm.lambda_factor;
      if (lambda > lm.max_lambda) {
        report.termination = Termination::kLambda;
        break;
      }
    }
  }
  report.final_cost = cost;
  return report;
}

// ---------------------------------------------------------------------------
// Graph marginalization

MarginalizationOutcome marginalize(FactorGraph& graph, std::size_t knots,
                                   const std::vector<FeatureId>& trajectories) {
  MarginalizationOutcome outcome;
  if (knots > graph.knots.size()) throw std::invalid_argument("marginalize: too many knots");
  std::set<Key> gone;
  for (std::size_t k = 0; k < knots; ++k) gone.insert(state_key(graph, k));
  for (FeatureId id : trajectories) {
    if (graph.landmarks.count(id)) gone.insert(Key::Landmark(id));
  }
  if (gone.empty()) return outcome;

  std::vector<LinearFactor> blanket;
  for (auto& f : linearize_impl(graph, false)) {
    const bool touches =
        std::any_of(f.keys.begin(), f.keys.end(), [&](const Key& k) { return gone.count(k) > 0; });
    if (touches) blanket.push_back(std::move(f));
  }
  if (auto f = prior_factor(graph)) blanket.push_back(std::move(*f));

  const MarginalizationResult result = marginalize(blanket, gone);
  outcome.damped_blocks = result.damped_blocks;
  PriorState next;
  next.prior = result.prior;
  for (const auto& key : next.prior.keys) {
    if (key.is_landmark()) {
      throw std::logic_error("marginalize: retained landmark " + std::to_string(key.id) +
                             " observed from a marginalized knot");
    }
    next.points[key.id] = graph.knots.at(*graph.knot_index(key.id));
  }

  outcome.knots.assign(graph.knots.begin(), graph.knots.begin() + static_cast<std::ptrdiff_t>(knots));
  graph.knots.erase(graph.knots.begin(), graph.knots.begin() + static_cast<std::ptrdiff_t>(knots));
  graph.first_knot_id += static_cast<std::int64_t>(knots);
  for (FeatureId id : trajectories) {
    if (graph.landmarks.erase(id)) outcome.trajectories.push_back(id);
  }
  if (next.prior.empty()) {
    graph.prior.reset();
  } else {
    graph.prior = std::move(next);
  }
  if (graph.gauge && !graph.knot_index(0)) graph.gauge.reset();
  if (graph.scale && (!graph.knot_index(graph.scale->first) || !graph.knot_index(graph.scale->second))) {
    graph.scale.reset();
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Streaming estimator

namespace {

// Linearly interpolated pixel of a track at time t, if t is bracketed by
// measurements no further apart than max_gap.
std::optional<Vec2> pixel_at(const std::vector<Measurement>& m, double t, double max_gap) {
  const auto it = std::lower_bound(m.begin(), m.end(), t,
                                   [](const Measurement& a, double v) { return a.t < v; });
  if (it == m.end()) return std::nullopt;
  if (it->t == t) return it->q;
  if (it == m.begin()) return std::nullopt;
  const auto prev = std::prev(it);
  if (it->t - prev->t > max_gap) return std::nullopt;
  const double a = (t - prev->t) / (it->t - prev->t);
  return ((1.0 - a) * prev->q + a * it->q).eval();
}

}  // namespace

Estimator::Estimator(EstimatorConfig config) : config_(std::move(config)) {
  if (!config_.graph.camera.is_valid()) throw std::invalid_argument("estimator: invalid camera");
  if (!(config_.knot_spacing > 0.0)) throw std::invalid_argument("estimator: knot spacing must be positive");
  if (config_.min_window < 2) throw std::invalid_argument("estimator: min_window must be >= 2");
  if (config_.initial_knots < config_.min_window) {
    throw std::invalid_argument("estimator: initial_knots must be >= min_window");
  }
  if (config_.max_window < config_.initial_knots) {
    throw std::invalid_argument("estimator: max_window must be >= initial_knots");
  }
  if (!(config_.graph.pixel_sigma > 0.0)) throw std::invalid_argument("estimator: pixel sigma must be positive");
  graph_.params = config_.graph;
}

void Estimator::process(const FeatureTrajectory& snapshot) {
  if (snapshot.measurements.empty()) return;
  FeatureTrajectory s = snapshot;
  if (!config_.graph.camera.distortion.is_zero()) {
    for (auto& m : s.measurements) m.q = config_.graph.camera.undistort(m.q);
  }
  if (initialized_) {
    ingest(s);
    return;
  }
  buffer(s);
  if (!try_initialize()) return;

  // Replay what was buffered through the regular path, oldest data first.
  std::vector<FeatureTrajectory> replay;
  for (auto& [id, t] : buffer_) replay.push_back(std::move(t));
  buffer_.clear();
  std::stable_sort(replay.begin(), replay.end(), [](const auto& a, const auto& b) {
    return a.back_time() < b.back_time();
  });
  for (const auto& t : replay) ingest(t);
}

void Estimator::buffer(const FeatureTrajectory& snapshot) {
  buffer_[snapshot.id] = snapshot;
  buffer_start_ = std::min(buffer_start_, snapshot.front_time());
  buffer_latest_ = std::max(buffer_latest_, snapshot.back_time());
}

bool Estimator::try_initialize() {
  const double dt = config_.knot_spacing;
  const double span = static_cast<double>(config_.initial_knots - 1) * dt;
  if (buffer_latest_ < buffer_start_ + span) return false;
  if (buffer_latest_ - last_attempt_ < 0.5 * dt) return false;
  last_attempt_ = buffer_latest_;

  auto give_up_if_stale = [&] {
    if (buffer_latest_ <= buffer_start_ + span + config_.init_timeout) return;
    // Slide the bootstrap window forward, dropping old measurements.
    const double start = buffer_latest_ - span;
    for (auto it = buffer_.begin(); it != buffer_.end();) {
      auto& m = it->second.measurements;
      m.erase(m.begin(), std::lower_bound(m.begin(), m.end(), start,
                                          [](const Measurement& a, double v) { return a.t < v; }));
      it = m.empty() ? buffer_.erase(it) : std::next(it);
    }
    buffer_start_ = std::numeric_limits<double>::infinity();
    for (const auto& [id, t] : buffer_) buffer_start_ = std::min(buffer_start_, t.front_time());
    spdlog::debug("initialization: sliding bootstrap window to {:.3f}", buffer_start_);
  };

  const double t0 = buffer_start_;
  const double ta = t0 + dt;
  const double tb = t0 + span;
  const CameraModel& cam = config_.graph.camera;
  std::vector<cv::Point2d> pa;
  std::vector<cv::Point2d> pb;
  for (const auto& [id, t] : buffer_) {
    const auto qa = pixel_at(t.measurements, ta, 2.0 * dt);
    const auto qb = pixel_at(t.measurements, tb, 2.0 * dt);
    if (!qa || !qb) continue;
    const Vec2 na = cam.normalize(*qa);
    const Vec2 nb = cam.normalize(*qb);
    pa.emplace_back(na.x(), na.y());
    pb.emplace_back(nb.x(), nb.y());
  }
  if (pa.size() < std::max<std::size_t>(config_.init_trajectories, 8)) {
    give_up_if_stale();
    return false;
  }

  cv::Mat mask;
  const double threshold = 1.5 / std::max(cam.fx, cam.fy);
  const cv::Mat e = cv::findEssentialMat(pa, pb, 1.0, cv::Point2d(0, 0), cv::RANSAC, 0.999, threshold, mask);
  if (e.rows != 3 || e.cols != 3) {
    give_up_if_stale();
    return false;
  }
  cv::Mat r_cv;
  cv::Mat t_cv;
  const int inliers = cv::recoverPose(e, pa, pb, r_cv, t_cv, 1.0, cv::Point2d(0, 0), mask);
  if (inliers < static_cast<int>(config_.init_trajectories)) {
    give_up_if_stale();
    return false;
  }
  Mat3 r;
  Vec3 t;
  for (int i = 0; i < 3; ++i) {
    t(i) = t_cv.at<double>(i);
    for (int j = 0; j < 3; ++j) r(i, j) = r_cv.at<double>(i, j);
  }
  // rotation-compensated parallax of the inliers
  std::vector<double> angles;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!mask.at<unsigned char>(static_cast<int>(i))) continue;
    const Vec3 ba = r * Vec3(pa[i].x, pa[i].y, 1.0).normalized();
    const Vec3 bb = Vec3(pb[i].x, pb[i].y, 1.0).normalized();
    angles.push_back(std::acos(std::clamp(ba.dot(bb), -1.0, 1.0)) * kRadToDeg);
  }
  std::nth_element(angles.begin(), angles.begin() + static_cast<std::ptrdiff_t>(angles.size() / 2), angles.end());
  if (angles[angles.size() / 2] < config_.gates.min_parallax_deg) {
    give_up_if_stale();
    return false;
  }

  // Camera b maps world (= camera a) points by x_b = r x_a + t.
  const Pose tb_pose = Pose(r, t).inverse();
  const Twist velocity = se3_log(tb_pose) / (tb - ta);
  FactorGraph g;
  g.params = config_.graph;
  for (std::size_t k = 0; k < config_.initial_knots; ++k) {
    const double tk = static_cast<double>(k) * dt;
    g.knots.push_back({t0 + tk, se3_exp(tk * velocity), velocity});
  }

  std::map<FeatureId, Triangulation> found;
  std::vector<double> depths;
  for (const auto& [id, tr] : buffer_) {
    std::vector<Vec2> px;
    std::vector<Pose> poses;
    for (const auto& m : tr.measurements) {
      if (!g.interval(m.t)) continue;
      px.push_back(m.q);
      poses.push_back(g.pose_at(m.t));
    }
    if (px.size() < config_.min_triangulation_views) continue;
    const Triangulation tri = triangulate(px, poses, cam, config_.gates);
    if (!tri.ok()) continue;
    found[id] = tri;
    depths.push_back(tri.point.z());
  }
  if (found.size() < std::max<std::size_t>(config_.init_trajectories / 2, 4)) {
    give_up_if_stale();
    return false;
  }

  // unit mean depth in the first camera
  const double mean_depth = std::accumulate(depths.begin(), depths.end(), 0.0) / static_cast<double>(depths.size());
  const double s = 1.0 / mean_depth;
  for (auto& k : g.knots) {
    k.pose = Pose(k.pose.rotation(), s * k.pose.translation());
    k.velocity.head<3>() *= s;
  }
  for (const auto& [id, tri] : found) {
    g.landmarks[id].p = s * tri.point;
    for (const auto& m : buffer_.at(id).measurements) {
      if (g.interval(m.t)) g.add_measurement(id, m);
    }
  }
  g.gauge = g.knots.front().pose;
  const std::size_t last = g.knots.size() - 1;
  g.scale = ScaleAnchor{0, static_cast<std::int64_t>(last),
                        (g.knots[last].pose.translation() - g.knots[0].pose.translation()).norm()};
  if (!(g.scale->distance > 1e-9)) {
    give_up_if_stale();
    return false;
  }

  const SolveReport report = solve(g, config_.lm);
  spdlog::info("initialized at t={:.3f}: {} landmarks from {} tracks, {} inliers, cost {:.3g} -> {:.3g}", t0,
               g.landmarks.size(), buffer_.size(), inliers, report.initial_cost, report.final_cost);

  graph_ = std::move(g);
  initialized_ = true;
  // Triangulated tracks keep their measurements; the rest start pending on
  // replay. Measurements already in the graph are skipped by ingest().
  return true;
}

bool Estimator::extend_to(double t) {
  bool extended = false;
  while (t >= graph_.knots.back().t) {
    graph_.knots.push_back(extrapolate(graph_.knots.back(), config_.knot_spacing));
    extended = true;
  }
  return extended;
}

void Estimator::ingest(const FeatureTrajectory& snapshot) {
  const FeatureId id = snapshot.id;
  if (retired_.count(id)) return;
  double last = graph_.knots.front().t - 1.0;
  const auto lm = graph_.landmarks.find(id);
  if (lm != graph_.landmarks.end()) {
    if (!lm->second.measurements.empty()) last = lm->second.measurements.back().t;
  } else if (const auto p = pending_.find(id); p != pending_.end() && !p->second.empty()) {
    last = p->second.back().t;
  }
  std::vector<Measurement> fresh;
  for (const auto& m : snapshot.measurements) {
    if (m.t > last && m.t >= graph_.knots.front().t) fresh.push_back(m);
  }
  if (fresh.empty()) return;

  const bool extended = extend_to(fresh.back().t);
  if (lm != graph_.landmarks.end()) {
    for (const auto& m : fresh) graph_.add_measurement(id, m);
  } else {
    auto& p = pending_[id];
    p.insert(p.end(), fresh.begin(), fresh.end());
    try_triangulate(id);
  }
  if (extended) step();
}

void Estimator::try_triangulate(FeatureId id) {
  const auto it = pending_.find(id);
  if (it == pending_.end() || it->second.size() < config_.min_triangulation_views) return;
  std::vector<Vec2> px;
  std::vector<Pose> poses;
  for (const auto& m : it->second) {
    px.push_back(m.q);
    poses.push_back(graph_.pose_at(m.t));
  }
  const Triangulation tri = triangulate(px, poses, config_.graph.camera, config_.gates);
  if (!tri.ok()) return;
  graph_.landmarks[id].p = tri.point;
  for (const auto& m : it->second) graph_.add_measurement(id, m);
  pending_.erase(it);
}

void Estimator::clip_pending() {
  const double t0 = graph_.knots.front().t;
  for (auto it = pending_.begin(); it != pending_.end();) {
    auto& m = it->second;
    m.erase(m.begin(), std::lower_bound(m.begin(), m.end(), t0,
                                        [](const Measurement& a, double v) { return a.t < v; }));
    it = m.empty() ? pending_.erase(it) : std::next(it);
  }
}

void Estimator::step() {
  // window shrinking
  std::vector<double> times;
  for (const auto& k : graph_.knots) times.push_back(k.t);
  std::vector<TrackView> views;
  for (const auto& [id, track] : graph_.landmarks) views.push_back({id, track.measurements});
  const MarginalizationPlan plan = dynamic_marginalization(times, views, config_.min_window);
  std::size_t knots = plan.knots;
  std::set<FeatureId> tracks(plan.trajectories.begin(), plan.trajectories.end());
  if (graph_.knots.size() - knots > config_.max_window) {
    knots = graph_.knots.size() - config_.max_window;
    const double cut = graph_.knots[knots].t;
    for (const auto& [id, track] : graph_.landmarks) {
      if (!track.measurements.empty() && track.measurements.front().t < cut) tracks.insert(id);
    }
    ++stats_.forced_marginalizations;
  }
  if (knots > 0 || !tracks.empty()) {
    for (FeatureId id : tracks) retired_landmarks_[id] = graph_.landmarks.at(id).p;
    const MarginalizationOutcome out = marginalize(graph_, knots, {tracks.begin(), tracks.end()});
    history_.insert(history_.end(), out.knots.begin(), out.knots.end());
    retired_.insert(tracks.begin(), tracks.end());
    stats_.marginalized_knots += out.knots.size();
    stats_.marginalized_trajectories += out.trajectories.size();
    stats_.damped_blocks += static_cast<std::size_t>(out.damped_blocks);
    clip_pending();
  }

  const auto start = std::chrono::steady_clock::now();
  const SolveReport report = solve(graph_, config_.lm);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  drop_outliers();

  ++stats_.solves;
  stats_.solve_seconds += seconds;
  stats_.max_window = std::max(stats_.max_window, graph_.knots.size());
  stats_.max_factors = std::max(stats_.max_factors, graph_.factor_count());
  stats_.window_trace.push_back(graph_.knots.size());
  stats_.solve_time_trace.push_back(seconds);
  emit(report, seconds);
}

void Estimator::drop_outliers() {
  const CameraModel& cam = config_.graph.camera;
  std::vector<FeatureId> bad;
  for (const auto& [id, track] : graph_.landmarks) {
    double sq = 0.0;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < track.measurements.size(); ++i) {
      const Measurement& m = track.measurements[i];
      const auto k = graph_.interval(m.t);
      const Pose pose = interpolate_pose(graph_.knots[*k], graph_.knots[*k + 1], track.gains[i]);
      const Vec3 pc = pose.rotation().transpose() * (track.p - pose.translation());
      if (!(pc.z() > config_.graph.min_depth)) continue;
      sq += (cam.project(pc) - m.q).squaredNorm();
      ++valid;
    }
    const std::size_t n = track.measurements.size();
    if (2 * valid < n || (valid > 0 && std::sqrt(sq / static_cast<double>(valid)) > config_.outlier_rms_px)) {
      bad.push_back(id);
    }
  }
  for (FeatureId id : bad) {
    graph_.landmarks.erase(id);
    retired_.insert(id);
  }
  stats_.dropped_landmarks += bad.size();
}

void Estimator::finish() {
  if (!initialized_) return;
  const auto start = std::chrono::steady_clock::now();
  const SolveReport report = solve(graph_, config_.lm);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++stats_.solves;
  stats_.solve_seconds += seconds;
  emit(report, seconds);
}

void Estimator::emit(const SolveReport& report, double seconds) {
  if (!sink_) return;
  EstimatorSnapshot snap;
  snap.time = graph_.knots.back().t;
  snap.window = graph_.knots;
  for (const auto& [id, track] : graph_.landmarks) snap.landmarks.emplace_back(id, track.p);
  snap.report = report;
  snap.factors = graph_.factor_count();
  snap.solve_seconds = seconds;
  sink_(snap);
}

std::vector<MotionState> Estimator::trajectory() const {
  std::vector<MotionState> out = history_;
  out.insert(out.end(), graph_.knots.begin(), graph_.knots.end());
  return out;
}

std::map<FeatureId, Vec3> Estimator::landmark_map() const {
  std::map<FeatureId, Vec3> out = retired_landmarks_;
  for (const auto& [id, track] : graph_.landmarks) out[id] = track.p;
  return out;
}

}  // namespace ctevo

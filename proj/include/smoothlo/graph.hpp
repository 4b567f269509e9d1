#pragma once

// Dense pose-only factor graph with a Levenberg-Marquardt solver, a
// semi-linearized mode, and Schur-complement marginalization.

#include "smoothlo/factors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothlo {

class DegenerateGeometryError : public std::runtime_error {
 public:
  explicit DegenerateGeometryError(PoseId pose)
      : std::runtime_error("normal equations are singular; pose " + std::to_string(pose) +
                           " is underconstrained"),
        pose_(pose) {}
  PoseId pose() const noexcept { return pose_; }

 private:
  PoseId pose_;
};

enum class OptimizeMode { full, semi_linearized };

struct LmSettings {
  int max_iterations = 20;
  double initial_lambda = 1e-4;
  double lambda_factor = 10.0;
  double min_lambda = 1e-10;
  double max_lambda = 1e4;
  double relative_tolerance = 1e-10;  // on accepted cost decrease
  double step_tolerance = 1e-10;      // on the update norm
};

struct OptimizeResult {
  std::vector<double> cost_trace;  // cost after each accepted step, starting with the initial cost
  int accepted = 0;
  int iterations = 0;
  bool converged = false;

  double initial_cost() const { return cost_trace.front(); }
  double final_cost() const { return cost_trace.back(); }
};

struct Graph {
  Values values;
  std::vector<MatchFactor> factors;
  std::vector<LinearFactor> linear;
  std::optional<PriorFactor> prior;
  std::set<PoseId> constants;  // held fixed by every solve

  // Linearization of all nonlinear factors not touching `stale_newest`.
  std::optional<GaussianTerm> stale;
  PoseId stale_newest = 0;

  PoseId newest() const { return values.rbegin()->first; }
  PoseId oldest() const { return values.begin()->first; }
  bool contains(PoseId id) const { return values.count(id) != 0; }
  bool is_constant(PoseId id) const { return constants.count(id) != 0; }

  /// Every factor references poses that exist.
  bool consistent() const {
    for (const auto& f : factors)
      if (!contains(f.target) || !contains(f.source)) return false;
    for (const auto& lf : linear)
      for (PoseId id : lf.ids)
        if (!contains(id)) return false;
    if (prior)
      for (PoseId id : prior->ids)
        if (!contains(id)) return false;
    return true;
  }

  void invalidate_stale() { stale.reset(); }
};

namespace detail {

/// Column layout of the free poses of one solve.
class Layout {
 public:
  Layout() = default;

  template <typename IdRange>
  Layout(const IdRange& ids, const std::set<PoseId>& fixed) {
    for (PoseId id : ids)
      if (!fixed.count(id)) free_.push_back(id);
    std::sort(free_.begin(), free_.end());
    free_.erase(std::unique(free_.begin(), free_.end()), free_.end());
    if (!free_.empty()) {
      base_ = free_.front();
      lookup_.assign(static_cast<std::size_t>(free_.back() - base_ + 1), -1);
      for (std::size_t j = 0; j < free_.size(); ++j) lookup_[free_[j] - base_] = static_cast<int>(6 * j);
    }
  }

  /// Column of the pose's first coordinate, or -1 when not free.
  int column(PoseId id) const {
    if (free_.empty() || id < base_ || id - base_ >= static_cast<PoseId>(lookup_.size())) return -1;
    return lookup_[id - base_];
  }

  int dimension() const { return 6 * static_cast<int>(free_.size()); }
  const std::vector<PoseId>& ids() const { return free_; }

 private:
  std::vector<PoseId> free_;
  PoseId base_ = 0;
  std::vector<int> lookup_;
};

struct System {
  Eigen::MatrixXd h;  // only blocks with row <= col are accumulated
  Eigen::VectorXd g;
  double cost = 0.0;

  explicit System(int n) : h(Eigen::MatrixXd::Zero(n, n)), g(Eigen::VectorXd::Zero(n)) {}

  void symmetrize() { h.triangularView<Eigen::StrictlyLower>() = h.transpose(); }
};

template <int Rows>
void add_pair(System& s, int ck, int ci, const Eigen::Matrix<double, Rows, 6>& jk,
              const Eigen::Matrix<double, Rows, 6>& ji, const Eigen::Matrix<double, Rows, 1>& r) {
  if (ck >= 0) {
    s.g.segment<6>(ck).noalias() += jk.transpose() * r;
    s.h.block<6, 6>(ck, ck).noalias() += jk.transpose() * jk;
  }
  if (ci >= 0) {
    s.g.segment<6>(ci).noalias() += ji.transpose() * r;
    s.h.block<6, 6>(ci, ci).noalias() += ji.transpose() * ji;
  }
  if (ck >= 0 && ci >= 0) {
    if (ck < ci) {
      s.h.block<6, 6>(ck, ci).noalias() += jk.transpose() * ji;
    } else {
      s.h.block<6, 6>(ci, ck).noalias() += ji.transpose() * jk;
    }
  }
}

inline void add_factor(System& s, const Layout& layout, const Values& values, const MatchFactor& f) {
  const int ck = layout.column(f.target);
  const int ci = layout.column(f.source);
  const Pose& xk = values.at(f.target);
  const Pose& xi = values.at(f.source);
  if (f.kind == FeatureKind::planar) {
    const auto e = planar_residual(xk, xi, f);
    s.cost += 0.5 * e.residual * e.residual;
    if (ck < 0 && ci < 0) return;
    add_pair<1>(s, ck, ci, e.d_target, e.d_source, Eigen::Matrix<double, 1, 1>(e.residual));
  } else {
    const auto e = point_residual(xk, xi, f);
    s.cost += 0.5 * e.residual.squaredNorm();
    if (ck < 0 && ci < 0) return;
    add_pair<3>(s, ck, ci, e.d_target, e.d_source, e.residual);
  }
}

inline void add_term(System& s, const Layout& layout, const Values& values, const GaussianTerm& t) {
  const Eigen::VectorXd d = t.delta(values);
  const Eigen::VectorXd hd = t.information * d;
  const Eigen::VectorXd grad = t.gradient + hd;
  s.cost += 0.5 * (t.constant + 2.0 * t.gradient.dot(d) + d.dot(hd));
  std::vector<int> cols(t.ids.size());
  for (std::size_t a = 0; a < t.ids.size(); ++a) cols[a] = layout.column(t.ids[a]);
  for (std::size_t a = 0; a < t.ids.size(); ++a) {
    if (cols[a] < 0) continue;
    s.g.segment<6>(cols[a]) += grad.segment<6>(6 * a);
    for (std::size_t b = 0; b < t.ids.size(); ++b) {
      if (cols[b] < 0 || cols[a] > cols[b]) continue;
      s.h.block<6, 6>(cols[a], cols[b]) += t.information.block<6, 6>(6 * a, 6 * b);
    }
  }
}

/// Factors sharing one (target, source) pair. They are evaluated in the
/// target frame so the pair's relative pose is composed once.
struct FactorGroup {
  PoseId target = 0;
  PoseId source = 0;
  std::vector<const MatchFactor*> factors;
};

inline std::vector<FactorGroup> group_factors(std::vector<const MatchFactor*> factors) {
  std::stable_sort(factors.begin(), factors.end(), [](const MatchFactor* a, const MatchFactor* b) {
    return a->target != b->target ? a->target < b->target : a->source < b->source;
  });
  std::vector<FactorGroup> groups;
  for (const MatchFactor* f : factors) {
    if (groups.empty() || groups.back().target != f->target || groups.back().source != f->source)
      groups.push_back({f->target, f->source, {}});
    groups.back().factors.push_back(f);
  }
  return groups;
}

inline double group_cost(const FactorGroup& grp, const Pose& xk, const Pose& xi) {
  const Pose rel = xk.inverse() * xi;
  double c = 0.0;
  for (const MatchFactor* f : grp.factors) {
    const Vector3 d = rel * f->source_point - f->target_point;
    if (f->kind == FeatureKind::planar) {
      const double r = f->target_normal.dot(d);
      c += r * r;
    } else {
      c += d.squaredNorm();
    }
  }
  return 0.5 * c;
}

// Same normal equations as add_factor on each member. Residuals and
// Jacobians are rotated into the target frame, which leaves J^T J and
// J^T r unchanged.
inline void add_group(System& s, const Layout& layout, const FactorGroup& grp, const Pose& xk, const Pose& xi) {
  const int ck = layout.column(grp.target);
  const int ci = layout.column(grp.source);
  if (ck < 0 && ci < 0) {
    s.cost += group_cost(grp, xk, xi);
    return;
  }
  const Pose rel = xk.inverse() * xi;
  Eigen::Matrix<double, 12, 12> h = Eigen::Matrix<double, 12, 12>::Zero();
  Eigen::Matrix<double, 12, 1> g = Eigen::Matrix<double, 12, 1>::Zero();
  double c = 0.0;
  for (const MatchFactor* f : grp.factors) {
    const Vector3 q = rel * f->source_point;
    if (f->kind == FeatureKind::planar) {
      const Vector3& n = f->target_normal;
      const double r = n.dot(q - f->target_point);
      const Vector3 ns = rel.rotation.transpose() * n;
      Eigen::Matrix<double, 12, 1> j;
      j << n.cross(q), -n, f->source_point.cross(ns), ns;
      h.noalias() += j * j.transpose();
      g.noalias() += r * j;
      c += r * r;
    } else {
      const Vector3 r = q - f->target_point;
      Eigen::Matrix<double, 3, 12> j;
      j.block<3, 3>(0, 0) = skew(f->target_point);
      j.block<3, 3>(0, 3) = -Matrix3::Identity();
      j.block<3, 3>(0, 6) = -rel.rotation * skew(f->source_point);
      j.block<3, 3>(0, 9) = rel.rotation;
      h.noalias() += j.transpose() * j;
      g.noalias() += j.transpose() * r;
      c += r.squaredNorm();
    }
  }
  s.cost += 0.5 * c;
  if (ck >= 0) {
    s.g.segment<6>(ck) += g.head<6>();
    s.h.block<6, 6>(ck, ck) += h.topLeftCorner<6, 6>();
  }
  if (ci >= 0) {
    s.g.segment<6>(ci) += g.tail<6>();
    s.h.block<6, 6>(ci, ci) += h.bottomRightCorner<6, 6>();
  }
  if (ck >= 0 && ci >= 0) {
    if (ck < ci) {
      s.h.block<6, 6>(ck, ci) += h.topRightCorner<6, 6>();
    } else {
      s.h.block<6, 6>(ci, ck) += h.bottomLeftCorner<6, 6>();
    }
  }
}

/// Everything a solve consumes: nonlinear factors plus Gaussian terms.
struct Problem {
  std::vector<FactorGroup> groups;
  std::vector<GaussianTerm> terms;
  std::set<PoseId> fixed;
};

inline System build_system(const Problem& p, const Layout& layout, const Values& values) {
  System s(layout.dimension());
  for (const auto& grp : p.groups) add_group(s, layout, grp, values.at(grp.target), values.at(grp.source));
  for (const auto& t : p.terms) add_term(s, layout, values, t);
  s.symmetrize();
  return s;
}

inline double problem_cost(const Problem& p, const Values& values) {
  double c = 0.0;
  for (const auto& grp : p.groups) c += group_cost(grp, values.at(grp.target), values.at(grp.source));
  for (const auto& t : p.terms) c += t.cost(values);
  return c;
}

/// Gaussian term summing the linearizations of the given factors at `values`.
inline GaussianTerm aggregate(const std::vector<const MatchFactor*>& factors, const Values& values) {
  std::vector<PoseId> ids;
  for (const MatchFactor* f : factors) {
    ids.push_back(f->target);
    ids.push_back(f->source);
  }
  const Layout layout(ids, {});
  System s(layout.dimension());
  for (const auto& grp : group_factors(factors))
    add_group(s, layout, grp, values.at(grp.target), values.at(grp.source));
  s.symmetrize();
  GaussianTerm t;
  t.ids = layout.ids();
  for (PoseId id : t.ids) t.linearization.push_back(values.at(id));
  t.information = std::move(s.h);
  t.gradient = std::move(s.g);
  t.constant = 2.0 * s.cost;
  return t;
}

/// Fixed poses for a solve: explicit constants, or the oldest pose when
/// nothing else fixes the gauge.
inline std::set<PoseId> gauge_fixed(const Graph& g) {
  std::set<PoseId> fixed = g.constants;
  if (!g.prior && fixed.empty() && !g.values.empty()) fixed.insert(g.oldest());
  return fixed;
}

}  // namespace detail

/// Linearizes every nonlinear factor not touching the newest pose, once.
/// Factors between two fixed poses are left out.
inline void linearize_stale(Graph& g, const std::set<PoseId>& fixed) {
  const PoseId newest = g.newest();
  if (g.stale && g.stale_newest == newest) return;
  std::vector<const MatchFactor*> stale;
  for (const auto& f : g.factors) {
    if (f.touches(newest) || (fixed.count(f.target) && fixed.count(f.source))) continue;
    stale.push_back(&f);
  }
  g.stale = detail::aggregate(stale, g.values);
  g.stale_newest = newest;
}

inline void linearize_stale(Graph& g) { linearize_stale(g, detail::gauge_fixed(g)); }

inline detail::Problem make_problem(Graph& g, OptimizeMode mode) {
  detail::Problem p;
  p.fixed = detail::gauge_fixed(g);
  std::vector<const MatchFactor*> active;
  if (mode == OptimizeMode::semi_linearized) {
    linearize_stale(g, p.fixed);
    const PoseId newest = g.newest();
    for (const auto& f : g.factors)
      if (f.touches(newest)) active.push_back(&f);
    if (!g.stale->ids.empty()) p.terms.push_back(*g.stale);
  } else {
    for (const auto& f : g.factors) {
      // factors between two fixed poses carry no information for the solve
      if (p.fixed.count(f.target) && p.fixed.count(f.source)) continue;
      active.push_back(&f);
    }
  }
  p.groups = detail::group_factors(std::move(active));
  for (const auto& lf : g.linear) p.terms.push_back(lf.gaussian());
  if (g.prior) p.terms.push_back(g.prior->gaussian());
  return p;
}

/// Levenberg-Marquardt over the free poses with updates X <- X * exp(delta).
/// Throws DegenerateGeometryError when a free pose is unconstrained.
inline OptimizeResult optimize(Graph& g, OptimizeMode mode, const LmSettings& settings = {}) {
  OptimizeResult result;
  if (g.values.empty()) {
    result.cost_trace.push_back(0.0);
    result.converged = true;
    return result;
  }
  const detail::Problem problem = make_problem(g, mode);
  std::vector<PoseId> all_ids;
  for (const auto& [id, pose] : g.values) all_ids.push_back(id);
  const detail::Layout layout(all_ids, problem.fixed);

  Values x = g.values;
  detail::System sys = detail::build_system(problem, layout, x);
  result.cost_trace.push_back(sys.cost);
  if (layout.dimension() == 0) {
    result.converged = true;
    return result;
  }

  double lambda = settings.initial_lambda;
  const int n = layout.dimension();
  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    ++result.iterations;
    const Eigen::VectorXd diag = sys.h.diagonal();
    const double max_diag = diag.maxCoeff();
    for (int c = 0; c < n; ++c) {
      if (!(diag(c) > 1e-12 * std::max(1.0, max_diag))) throw DegenerateGeometryError(layout.ids()[c / 6]);
    }
    if (sys.g.lpNorm<Eigen::Infinity>() == 0.0) {
      result.converged = true;
      break;
    }

    bool accepted = false;
    bool stop = false;
    while (!accepted && !stop) {
      Eigen::MatrixXd damped = sys.h;
      damped.diagonal() += lambda * diag;
      Eigen::LLT<Eigen::MatrixXd> llt(damped);
      if (llt.info() != Eigen::Success) {
        if (lambda >= settings.max_lambda) throw DegenerateGeometryError(layout.ids().front());
        lambda = std::min(lambda * settings.lambda_factor, settings.max_lambda);
        continue;
      }
      const Eigen::VectorXd step = -llt.solve(sys.g);
      if (step.norm() < settings.step_tolerance) {
        result.converged = true;
        stop = true;
        break;
      }
      Values trial = x;
      for (std::size_t j = 0; j < layout.ids().size(); ++j) {
        Pose& p = trial.at(layout.ids()[j]);
        p = retract(p, step.segment<6>(6 * j));
      }
      const double trial_cost = detail::problem_cost(problem, trial);
      if (trial_cost <= sys.cost) {
        const double decrease = (sys.cost - trial_cost) / std::max(sys.cost, 1e-300);
        x = std::move(trial);
        sys = detail::build_system(problem, layout, x);
        result.cost_trace.push_back(sys.cost);
        ++result.accepted;
        lambda = std::max(lambda / settings.lambda_factor, settings.min_lambda);
        accepted = true;
        if (decrease < settings.relative_tolerance) {
          result.converged = true;
          stop = true;
        }
      } else if (lambda >= settings.max_lambda) {
        stop = true;
      } else {
        lambda = std::min(lambda * settings.lambda_factor, settings.max_lambda);
      }
    }
    if (stop) break;
  }
  g.values = std::move(x);
  return result;
}

struct MarginalizationReport {
  std::size_t absorbed_factors = 0;
  bool regularized = false;  // the eliminated block was rank deficient
};

/// Eliminates `drop` via the Schur complement of every term touching it. The
/// result replaces the graph's prior and covers the remaining connected poses.
inline MarginalizationReport marginalize(Graph& g, const std::set<PoseId>& drop) {
  MarginalizationReport report;
  const auto touches_drop = [&](PoseId id) { return drop.count(id) != 0; };

  std::vector<const MatchFactor*> touching;
  for (const auto& f : g.factors)
    if (touches_drop(f.target) || touches_drop(f.source)) touching.push_back(&f);
  std::vector<const LinearFactor*> touching_linear;
  for (const auto& lf : g.linear)
    if (std::any_of(lf.ids.begin(), lf.ids.end(), touches_drop)) touching_linear.push_back(&lf);
  const bool prior_touches =
      g.prior && std::any_of(g.prior->ids.begin(), g.prior->ids.end(), touches_drop);

  const auto erase_dropped = [&] {
    std::erase_if(g.factors, [&](const MatchFactor& f) { return touches_drop(f.target) || touches_drop(f.source); });
    std::erase_if(g.linear, [&](const LinearFactor& lf) { return std::any_of(lf.ids.begin(), lf.ids.end(), touches_drop); });
    for (PoseId id : drop) {
      g.values.erase(id);
      g.constants.erase(id);
    }
    g.invalidate_stale();
  };

  if (touching.empty() && touching_linear.empty() && !prior_touches) {
    erase_dropped();
    return report;
  }
  report.absorbed_factors = touching.size() + touching_linear.size();

  const std::set<PoseId> fixed = detail::gauge_fixed(g);
  std::vector<PoseId> involved;
  for (const MatchFactor* f : touching) {
    involved.push_back(f->target);
    involved.push_back(f->source);
  }
  for (const LinearFactor* lf : touching_linear) involved.insert(involved.end(), lf->ids.begin(), lf->ids.end());
  if (g.prior) involved.insert(involved.end(), g.prior->ids.begin(), g.prior->ids.end());

  // kept blocks first, dropped blocks last
  std::vector<PoseId> kept_ids, drop_ids;
  const detail::Layout layout(involved, fixed);
  for (PoseId id : layout.ids()) (touches_drop(id) ? drop_ids : kept_ids).push_back(id);
  std::vector<PoseId> ordered = kept_ids;
  ordered.insert(ordered.end(), drop_ids.begin(), drop_ids.end());

  // Reference point: previous prior linearization where it exists, else current values.
  Values base = g.values;
  if (g.prior)
    for (std::size_t j = 0; j < g.prior->ids.size(); ++j) base.at(g.prior->ids[j]) = g.prior->linearization[j];

  const int nk = 6 * static_cast<int>(kept_ids.size());
  const int nd = 6 * static_cast<int>(drop_ids.size());
  const auto col_of = [&](PoseId id) -> int {
    const auto it = std::find(ordered.begin(), ordered.end(), id);
    return it == ordered.end() ? -1 : static_cast<int>(6 * (it - ordered.begin()));
  };

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nk + nd, nk + nd);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nk + nd);
  const auto add_gaussian = [&](GaussianTerm t) {
    std::vector<Pose> lin;
    for (PoseId id : t.ids) lin.push_back(base.at(id));
    t.relocate(lin);
    // fixed poses contribute through their offset from the reference point
    const Eigen::VectorXd d = t.delta(g.values);
    Eigen::VectorXd d_fixed = Eigen::VectorXd::Zero(t.dimension());
    for (std::size_t a = 0; a < t.ids.size(); ++a)
      if (col_of(t.ids[a]) < 0) d_fixed.segment<6>(6 * a) = d.segment<6>(6 * a);
    const Eigen::VectorXd tg = t.gradient + t.information * d_fixed;
    for (std::size_t a = 0; a < t.ids.size(); ++a) {
      const int ca = col_of(t.ids[a]);
      if (ca < 0) continue;
      grad.segment<6>(ca) += tg.segment<6>(6 * a);
      for (std::size_t b = 0; b < t.ids.size(); ++b) {
        const int cb = col_of(t.ids[b]);
        if (cb >= 0) h.block<6, 6>(ca, cb) += t.information.block<6, 6>(6 * a, 6 * b);
      }
    }
  };

  if (!touching.empty()) add_gaussian(detail::aggregate(touching, g.values));
  for (const LinearFactor* lf : touching_linear) add_gaussian(lf->gaussian());
  if (g.prior) add_gaussian(g.prior->gaussian());

  erase_dropped();
  if (kept_ids.empty()) {
    g.prior.reset();
    return report;
  }

  Eigen::MatrixXd hkk = h.topLeftCorner(nk, nk);
  Eigen::VectorXd gk = grad.head(nk);
  if (nd > 0) {
    Eigen::MatrixXd hdd = h.bottomRightCorner(nd, nd);
    Eigen::LLT<Eigen::MatrixXd> llt(hdd);
    const double scale = std::max(1.0, hdd.diagonal().maxCoeff());
    bool deficient = llt.info() != Eigen::Success;
    if (!deficient) {
      const Eigen::VectorXd ld = Eigen::MatrixXd(llt.matrixL()).diagonal();
      deficient = ld.minCoeff() * ld.minCoeff() < 1e-14 * scale;
    }
    if (deficient) {
      hdd.diagonal().array() += 1e-10;
      llt.compute(hdd);
      report.regularized = true;
    }
    const Eigen::MatrixXd hdk = h.bottomLeftCorner(nd, nk);
    hkk -= hdk.transpose() * llt.solve(hdk);
    gk -= hdk.transpose() * llt.solve(grad.tail(nd));
  }
  std::vector<Pose> lin;
  for (PoseId id : kept_ids) lin.push_back(base.at(id));
  g.prior = prior_from_information(kept_ids, lin, hkk, gk);
  return report;
}

}  // namespace smoothlo

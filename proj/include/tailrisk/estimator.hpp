#pragma once

// Multi-start estimation: score uniform draws from a sampling box, keep the
// best few, and refine each by alternating Nelder-Mead and BFGS rounds.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "tailrisk/common.hpp"
#include "tailrisk/loss_functions.hpp"
#include "tailrisk/optim.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk {

inline constexpr double kPenalty = 1e6;

struct SamplingBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

struct EstimatorOptions {
  std::size_t n_starts = 50000;
  std::size_t m_keep = 10;
  std::uint64_t seed = 1;
  std::size_t max_alternations = 20;
  optim::Options local{};
  std::size_t burn_in = 50;
  std::size_t min_observations = 100;  // after burn-in
  /// Coordinates held fixed during estimation (index into the flat vector, value).
  std::vector<std::pair<std::size_t, double>> fixed;
  std::optional<SamplingBox> box;
  std::size_t threads = 0;  // 0: thread_count()
};

struct FitResult {
  ModelSpec spec;
  ParamVector params;
  double objective = 0.0;
  std::size_t starts_tried = 0;
  std::size_t refinements = 0;
  bool converged = false;
  bool fallback = false;  // warm update fell back to complete estimation
  std::chrono::duration<double> elapsed{0.0};
  std::size_t n_obs = 0;
  std::size_t burn_in = 0;
  SamplingBox box;
};

/// Mean score over t >= burn_in, or kPenalty plus the violation size for an
/// infeasible parameter vector. Fills *grad with the analytic gradient.
inline double model_objective(const ModelSpec& spec, const ParamVector& p, const MarketData& data,
                              std::size_t burn_in, Eigen::VectorXd* grad = nullptr) {
  const auto np = static_cast<Eigen::Index>(layout(spec).size);
  if (grad) grad->setZero(np);
  const auto& d = p.d;
  FeasibilityReport stat;
  if (is_multiplicative(spec.var_form)) {
    if (!(d[0] > 0.0)) stat.fail("d0", d[0]);
    if (!(d[1] >= 0.0)) stat.fail("d1", d[1]);
    if (!(d[2] >= 0.0)) stat.fail("d2", d[2]);
    if (!(d[2] < 1.0)) stat.fail("d2", d[2] - 1.0);
    if (uses_leverage(spec.var_form) && !(d[3] >= 0.0)) stat.fail("d3", d[3]);
  } else if (!(std::abs(d[2]) < 1.0)) {
    stat.fail("d2", std::abs(d[2]) - 1.0);
  }
  if (!stat.ok) return kPenalty + stat.magnitude;

  const std::size_t T = data.size();
  CompensatedSum total;
  detail::GradVec acc;
  if (grad) acc.setZero(np);
  const auto alpha = spec.alpha;
  const auto loss = spec.loss;
  const bool es = spec.has_es();
  std::optional<detail::Violation> viol;
  auto visit = [&](std::size_t t, double v, double e, double, const auto& gv, const auto& ge) {
    if (t < burn_in) return;
    const double r = data.returns[t];
    total.add(score(loss, r, v, e, alpha));
    if (grad) {
      const auto sg = score_gradient(loss, r, v, e, alpha);
      acc += sg.dv * gv;
      if (es) acc += sg.de * ge;
    }
  };
  if (grad) {
    viol = detail::recurse<true>(spec, p, data, visit);
  } else {
    viol = detail::recurse<false>(spec, p, data, visit);
  }
  if (viol) {
    if (grad) grad->setZero(np);
    return kPenalty + viol->magnitude;
  }
  const double n = static_cast<double>(T - burn_in);
  if (grad) *grad = acc / n;
  return total.value() / n;
}

/// Default sampling region for the multi-start draws.
inline SamplingBox default_box(const ModelSpec& spec, const MarketData& data) {
  const auto l = layout(spec);
  const auto n = static_cast<Eigen::Index>(l.size);
  SamplingBox box{Eigen::VectorXd(n), Eigen::VectorXd(n)};
  const double var = sample_variance(data.returns);
  const double sd = std::sqrt(var);
  const double q = std::min(empirical_quantile(data.returns, spec.alpha), -1e-12);
  auto set = [&](Eigen::Index i, double lo, double hi) {
    box.lo[i] = lo;
    box.hi[i] = hi;
  };
  if (is_multiplicative(spec.var_form)) {
    set(0, 0.0, 2.0 * var);
    set(1, 0.0, 1.0);
    set(2, 0.0, 0.999);
    if (l.d3 >= 0) set(l.d3, 0.0, 1.0);
    if (l.a1 >= 0) {
      for (int i = 0; i < 3; ++i) set(l.a1 + i, -2.0, 2.0);
    }
  } else {
    // VaR is negative: intercept, volatility and leverage loadings are sampled
    // on the negative side.
    set(0, 2.0 * q, 0.0);
    set(1, -3.0, 0.0);
    set(2, 0.0, 0.999);
    if (l.d3 >= 0) set(l.d3, -1.0, 0.0);
    if (l.a1 >= 0) {
      for (int i = 0; i < 3; ++i) set(l.a1 + i, -2.0 * sd, 2.0 * sd);
    }
  }
  if (l.b0 >= 0) set(l.b0, -2.0, 2.0);
  if (l.b1 >= 0) {
    set(l.b1, -2.0, 2.0);
    set(l.b1 + 1, -2.0, 2.0);
  }
  return box;
}

struct RefineResult {
  Eigen::VectorXd x;
  double f = 0.0;
  std::size_t rounds = 0;
  bool converged = false;
};

/// Alternates Nelder-Mead and BFGS from x0 until a round improves the objective
/// by less than the relative tolerance. Never returns a point worse than x0.
inline RefineResult refine_alternating(const optim::Objective& f, const Eigen::VectorXd& x0,
                                       const Eigen::VectorXd& scale, const EstimatorOptions& opt,
                                       std::size_t max_rounds) {
  RefineResult best{x0, f(x0, nullptr), 0, false};
  Eigen::VectorXd step = scale;
  for (std::size_t round = 0; round < max_rounds; ++round) {
    const double f_start = best.f;
    auto nm = optim::nelder_mead(f, best.x, step, opt.local);
    if (nm.f < best.f) {
      best.x = nm.x;
      best.f = nm.f;
    }
    auto bf = optim::bfgs(f, best.x, opt.local, kPenalty);
    if (bf.f < best.f) {
      best.x = bf.x;
      best.f = bf.f;
    }
    best.rounds = round + 1;
    if (f_start - best.f < opt.local.f_tol * std::max(1.0, std::abs(best.f))) {
      best.converged = true;
      break;
    }
    for (Eigen::Index i = 0; i < step.size(); ++i) {
      step[i] = std::max(0.05 * std::abs(best.x[i]), 0.01 * scale[i]);
    }
  }
  return best;
}

struct MultiStartOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  std::size_t starts_tried = 0;
  std::size_t refinements = 0;
  bool converged = false;
};

namespace detail {

inline bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

// Deterministic ordering: objective, then parameter vector, then index.
struct Ranked {
  double f;
  const Eigen::VectorXd* x;
  std::size_t index;
  bool operator<(const Ranked& o) const {
    if (f != o.f) return f < o.f;
    if (lex_less(*x, *o.x)) return true;
    if (lex_less(*o.x, *x)) return false;
    return index < o.index;
  }
};

}  // namespace detail

/// Multi-start minimization: n_starts counter-seeded uniform draws from `box`
/// plus any `seeds`, keep the m_keep best, refine each, return the best.
inline MultiStartOutcome multistart_minimize(const optim::Objective& f, const SamplingBox& box,
                                             const EstimatorOptions& opt,
                                             const std::vector<Eigen::VectorXd>& seeds = {},
                                             std::optional<Eigen::VectorXd> scale = std::nullopt) {
  const Eigen::Index dim = box.lo.size();
  const std::size_t n_draw = opt.n_starts;
  const std::size_t n_total = n_draw + seeds.size();
  if (n_total == 0) throw ValidationError("multistart: no starting points");
  const std::size_t threads = opt.threads ? opt.threads : thread_count();
  std::vector<Eigen::VectorXd> starts(n_total);
  std::vector<double> vals(n_total);
  parallel_for(
      n_total,
      [&](std::size_t i) {
        if (i < n_draw) {
          Eigen::VectorXd x(dim);
          for (Eigen::Index k = 0; k < dim; ++k) {
            const double u = counter_uniform(opt.seed, static_cast<std::uint64_t>(i) * 64u + static_cast<std::uint64_t>(k));
            x[k] = box.lo[k] + (box.hi[k] - box.lo[k]) * u;
          }
          starts[i] = std::move(x);
        } else {
          starts[i] = seeds[i - n_draw];
        }
        const double v = f(starts[i], nullptr);
        vals[i] = std::isfinite(v) ? v : std::numeric_limits<double>::max();
      },
      threads);

  std::vector<detail::Ranked> ranked;
  ranked.reserve(n_total);
  for (std::size_t i = 0; i < n_total; ++i) {
    if (vals[i] < kPenalty) ranked.push_back({vals[i], &starts[i], i});
  }
  if (ranked.empty()) throw NumericalError("multistart: every starting point is infeasible");
  const std::size_t keep = std::min(std::max<std::size_t>(opt.m_keep, 1), ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end());

  Eigen::VectorXd step = scale ? *scale : Eigen::VectorXd(0.05 * (box.hi - box.lo));
  for (Eigen::Index k = 0; k < dim; ++k) {
    if (!(step[k] > 0.0)) step[k] = 1e-3;
  }
  std::vector<RefineResult> refined(keep);
  parallel_for(
      keep,
      [&](std::size_t j) { refined[j] = refine_alternating(f, *ranked[j].x, step, opt, opt.max_alternations); },
      threads);

  std::size_t best = 0;
  for (std::size_t j = 1; j < keep; ++j) {
    const auto& a = refined[j];
    const auto& b = refined[best];
    if (a.f < b.f || (a.f == b.f && detail::lex_less(a.x, b.x))) best = j;
  }
  MultiStartOutcome out;
  out.x = refined[best].x;
  out.f = refined[best].f;
  out.starts_tried = n_total;
  out.refinements = keep;
  out.converged = refined[best].converged;
  if (!std::isfinite(out.f) || out.f >= kPenalty) throw NumericalError("multistart: non-finite objective at the optimum");
  return out;
}

namespace detail {

// Maps between the full parameter vector and the free coordinates.
struct FreeMap {
  std::vector<std::size_t> free;
  Eigen::VectorXd base;

  FreeMap(const ModelSpec& spec, const EstimatorOptions& opt) {
    const auto n = layout(spec).size;
    base = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    std::vector<bool> is_fixed(n, false);
    for (auto [i, v] : opt.fixed) {
      if (i >= n) throw ValidationError("fixed parameter index out of range");
      is_fixed[i] = true;
      base[static_cast<Eigen::Index>(i)] = v;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_fixed[i]) free.push_back(i);
    }
    if (free.empty()) throw ValidationError("every parameter is fixed");
  }
  Eigen::VectorXd expand(const Eigen::VectorXd& z) const {
    Eigen::VectorXd x = base;
    for (std::size_t k = 0; k < free.size(); ++k) x[static_cast<Eigen::Index>(free[k])] = z[static_cast<Eigen::Index>(k)];
    return x;
  }
  Eigen::VectorXd restrict(const Eigen::VectorXd& x) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) z[static_cast<Eigen::Index>(k)] = x[static_cast<Eigen::Index>(free[k])];
    return z;
  }
};

inline optim::Objective make_objective(const ModelSpec& spec, const MarketData& data, std::size_t burn_in,
                                       const FreeMap& map) {
  return [&spec, &data, burn_in, &map](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
    const ParamVector p = from_vector(spec, map.expand(z));
    if (!grad) return model_objective(spec, p, data, burn_in, nullptr);
    Eigen::VectorXd full;
    const double v = model_objective(spec, p, data, burn_in, &full);
    *grad = map.restrict(full);
    return v;
  };
}

inline void check_sample(const ModelSpec& spec, const MarketData& data, const EstimatorOptions& opt) {
  spec.validate();
  data.validate();
  if (data.size() < opt.burn_in + opt.min_observations) {
    throw ValidationError("estimation needs at least " + std::to_string(opt.min_observations) +
                          " observations after the burn-in of " + std::to_string(opt.burn_in) + ", got " +
                          std::to_string(data.size()));
  }
}

}  // namespace detail

/// Full multi-start estimation of the model on `data`.
inline FitResult complete_estimation(const ModelSpec& spec, const MarketData& data, const EstimatorOptions& opt = {},
                                     const std::vector<ParamVector>& seeds = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::check_sample(spec, data, opt);
  const detail::FreeMap map(spec, opt);
  const SamplingBox full_box = opt.box ? *opt.box : default_box(spec, data);
  SamplingBox box{map.restrict(full_box.lo), map.restrict(full_box.hi)};
  const auto f = detail::make_objective(spec, data, opt.burn_in, map);
  std::vector<Eigen::VectorXd> seed_vecs;
  for (const auto& s : seeds) seed_vecs.push_back(map.restrict(to_vector(spec, s)));
  const auto out = multistart_minimize(f, box, opt, seed_vecs);
  FitResult fit;
  fit.spec = spec;
  fit.params = from_vector(spec, map.expand(out.x));
  fit.objective = out.f;
  fit.starts_tried = out.starts_tried;
  fit.refinements = out.refinements;
  fit.converged = out.converged;
  fit.n_obs = data.size();
  fit.burn_in = opt.burn_in;
  fit.box = full_box;
  fit.elapsed = std::chrono::steady_clock::now() - t0;
  return fit;
}

/// One Nelder-Mead + BFGS pass seeded at the previous estimate. Falls back to
/// complete estimation (flagged) when the previous estimate is infeasible here.
inline FitResult warm_update(const ModelSpec& spec, const FitResult& previous, const MarketData& data,
                             const EstimatorOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::check_sample(spec, data, opt);
  const detail::FreeMap map(spec, opt);
  const auto f = detail::make_objective(spec, data, opt.burn_in, map);
  const Eigen::VectorXd z0 = map.restrict(to_vector(spec, previous.params));
  const double f0 = f(z0, nullptr);
  if (!(f0 < kPenalty)) {
    FitResult fit = complete_estimation(spec, data, opt);
    fit.fallback = true;
    fit.elapsed = std::chrono::steady_clock::now() - t0;
    return fit;
  }
  Eigen::VectorXd scale(z0.size());
  for (Eigen::Index i = 0; i < z0.size(); ++i) {
    scale[i] = std::max(0.05 * std::abs(z0[i]), 1e-3 * std::sqrt(sample_variance(data.returns)));
  }
  const auto r = refine_alternating(f, z0, scale, opt, 1);
  FitResult fit;
  fit.spec = spec;
  fit.params = from_vector(spec, map.expand(r.x));
  fit.objective = r.f;
  fit.starts_tried = 1;
  fit.refinements = 1;
  fit.converged = r.converged;
  fit.n_obs = data.size();
  fit.burn_in = opt.burn_in;
  fit.box = previous.box;
  fit.elapsed = std::chrono::steady_clock::now() - t0;
  return fit;
}

}  // namespace tailrisk

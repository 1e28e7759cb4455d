#pragma once

// Synthetic data with known VaR/ES: location-scale daily processes with
// standardized Student-t innovations, an intraday square-root variance
// diffusion, and Monte Carlo rejection-rate studies for the backtests.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "tailrisk/backtests.hpp"
#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/realized_measures.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk {

enum class DgpKind { garch_t, constant_t, diffusion, avgarch_t };

inline const char* to_string(DgpKind k) noexcept {
  switch (k) {
    case DgpKind::garch_t: return "garch_t";
    case DgpKind::constant_t: return "constant_t";
    case DgpKind::diffusion: return "diffusion";
    case DgpKind::avgarch_t: return "avgarch_t";
  }
  return "?";
}

inline DgpKind parse_dgp_kind(const std::string& s) {
  for (auto k : {DgpKind::garch_t, DgpKind::constant_t, DgpKind::diffusion, DgpKind::avgarch_t}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown DGP kind '" + s + "'");
}

struct DgpSpec {
  DgpKind kind = DgpKind::garch_t;
  // Daily scale recursion. garch_t: h2 = omega + alpha_g r^2 + beta h2;
  // avgarch_t: h = omega + alpha_g |r| + beta h; constant_t: h2 = omega.
  double omega = 0.05;
  double alpha_g = 0.10;
  double beta = 0.85;
  double nu = 8.0;
  // Diffusion (time unit: one trading day): dV = kappa (theta - V) dt + xi sqrt(V) dW_v,
  // dp = sqrt(V) dW_p, corr(dW_p, dW_v) = rho.
  double theta = 1e-4;
  double kappa = 5.0;
  double xi = 0.01;
  double rho = -0.5;
  double v0 = -1.0;  // negative: start at theta
  double p0 = 4.60517018598809136;  // log(100)
  std::size_t fine_ratio = 10;
  std::uint64_t seed = 1;

  void validate() const {
    auto bad = [](const std::string& m) { throw ValidationError("invalid DGP: " + m); };
    switch (kind) {
      case DgpKind::garch_t:
        if (!(omega > 0.0)) bad("omega must be > 0");
        if (!(alpha_g >= 0.0 && beta >= 0.0)) bad("alpha_g and beta must be >= 0");
        if (!(alpha_g + beta < 1.0)) bad("alpha_g + beta must be < 1");
        if (!(nu > 4.0)) bad("nu must exceed 4");
        break;
      case DgpKind::avgarch_t:
        if (!(omega > 0.0)) bad("omega must be > 0");
        if (!(alpha_g >= 0.0 && beta >= 0.0)) bad("alpha_g and beta must be >= 0");
        if (!(beta < 1.0)) bad("beta must be < 1");
        if (!(nu > 4.0)) bad("nu must exceed 4");
        break;
      case DgpKind::constant_t:
        if (!(omega > 0.0)) bad("omega must be > 0");
        if (!(nu > 4.0)) bad("nu must exceed 4");
        break;
      case DgpKind::diffusion:
        if (!(theta > 0.0 && kappa >= 0.0 && xi >= 0.0)) bad("theta > 0, kappa >= 0, xi >= 0 required");
        if (!(rho >= -1.0 && rho <= 1.0)) bad("rho must lie in [-1,1]");
        if (fine_ratio < 1) bad("fine_ratio must be >= 1");
        break;
    }
  }
};

/// alpha-quantile of the unit-variance Student-t.
inline double std_t_quantile(double alpha, double nu) {
  const boost::math::students_t_distribution<double> t(nu);
  return boost::math::quantile(t, alpha) * std::sqrt((nu - 2.0) / nu);
}

/// E[z | z <= q_alpha] for the unit-variance Student-t, in closed form.
inline double std_t_es(double alpha, double nu) {
  const boost::math::students_t_distribution<double> t(nu);
  const double ta = boost::math::quantile(t, alpha);
  const double es = -boost::math::pdf(t, ta) * (nu + ta * ta) / ((nu - 1.0) * alpha);
  return es * std::sqrt((nu - 2.0) / nu);
}

struct DailySimulation {
  std::vector<double> returns;
  std::vector<double> true_v;
  std::vector<double> true_e;
  std::vector<double> scale;  // h_t
  std::vector<double> rv;     // r_t^2
  std::vector<double> sk;     // uninformative realized-moment stand-ins
  std::vector<double> ku;

  MarketData market() const { return {returns, rv, sk, ku}; }
};

namespace detail {
inline std::vector<double> std_t_draws(std::uint64_t seed, std::size_t n, double nu) {
  const boost::math::students_t_distribution<double> t(nu);
  const double s = std::sqrt((nu - 2.0) / nu);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = boost::math::quantile(t, counter_uniform(seed, i)) * s;
  return z;
}
inline double std_normal(std::uint64_t seed, std::uint64_t counter) {
  static const boost::math::normal_distribution<double> nd;
  return boost::math::quantile(nd, counter_uniform(seed, counter));
}
}  // namespace detail

/// Daily returns r_t = h_t z_t with true VaR h_t q and ES h_t es at level alpha.
inline DailySimulation simulate_daily(const DgpSpec& dgp, std::size_t T, double alpha = 0.05) {
  dgp.validate();
  if (dgp.kind == DgpKind::diffusion) throw ValidationError("simulate_daily: use simulate_intraday for the diffusion DGP");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
  if (T == 0) throw ValidationError("simulate_daily: T must be positive");
  const double q = std_t_quantile(alpha, dgp.nu);
  const double es = std_t_es(alpha, dgp.nu);
  const auto z = detail::std_t_draws(stream_seed(dgp.seed, 1), T, dgp.nu);
  const std::uint64_t sk_seed = stream_seed(dgp.seed, 2), ku_seed = stream_seed(dgp.seed, 3);
  DailySimulation s;
  s.returns.resize(T);
  s.true_v.resize(T);
  s.true_e.resize(T);
  s.scale.resize(T);
  s.rv.resize(T);
  s.sk.resize(T);
  s.ku.resize(T);
  double h2 = 0.0, h = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    switch (dgp.kind) {
      case DgpKind::garch_t:
        h2 = t == 0 ? dgp.omega / (1.0 - dgp.alpha_g - dgp.beta)
                    : dgp.omega + dgp.alpha_g * s.returns[t - 1] * s.returns[t - 1] + dgp.beta * h2;
        h = std::sqrt(h2);
        break;
      case DgpKind::constant_t:
        h = std::sqrt(dgp.omega);
        break;
      case DgpKind::avgarch_t: {
        if (t == 0) {
          // E|z| for the unit-variance t; starts the recursion at its stationary mean when finite.
          const double nu = dgp.nu;
          const double eabs = std::sqrt((nu - 2.0) / std::numbers::pi) * std::exp(std::lgamma((nu - 1.0) / 2.0) - std::lgamma(nu / 2.0));
          const double denom = 1.0 - dgp.alpha_g * eabs - dgp.beta;
          h = denom > 0.0 ? dgp.omega / denom : dgp.omega / (1.0 - dgp.beta);
        } else {
          h = dgp.omega + dgp.alpha_g * std::abs(s.returns[t - 1]) + dgp.beta * h;
        }
        break;
      }
      case DgpKind::diffusion: break;
    }
    s.scale[t] = h;
    s.returns[t] = h * z[t];
    s.true_v[t] = h * q;
    s.true_e[t] = h * es;
    s.rv[t] = s.returns[t] * s.returns[t];
    s.sk[t] = 0.3 * detail::std_normal(sk_seed, t);
    s.ku[t] = 3.0 + 0.5 * std::abs(detail::std_normal(ku_seed, t));
  }
  return s;
}

struct IntradaySimulation {
  std::vector<IntradayDay> days;
  std::vector<double> integrated_variance;
};

/// ISO date `offset` calendar days after 2000-01-01.
inline std::string synthetic_date(std::int64_t offset) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{year{2000} / January / 1} + days{offset}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

/// N-interval intraday log-price grids subsampled from an Euler path with
/// fine_ratio steps per interval; IV is the fine-grid sum of V dt.
inline IntradaySimulation simulate_intraday(const DgpSpec& dgp, std::size_t n_days, std::size_t N) {
  dgp.validate();
  if (dgp.kind != DgpKind::diffusion) throw ValidationError("simulate_intraday needs the diffusion DGP");
  if (N < 2) throw ValidationError("simulate_intraday: N must be >= 2");
  const std::size_t M = N * dgp.fine_ratio;
  const double dt = 1.0 / static_cast<double>(M);
  const double sdt = std::sqrt(dt);
  const double rc = std::sqrt(std::max(0.0, 1.0 - dgp.rho * dgp.rho));
  IntradaySimulation out;
  out.days.resize(n_days);
  out.integrated_variance.resize(n_days);
  double V = dgp.v0 >= 0.0 ? dgp.v0 : dgp.theta;
  double p = dgp.p0;
  const std::uint64_t s1 = stream_seed(dgp.seed, 11), s2 = stream_seed(dgp.seed, 12);
  for (std::size_t d = 0; d < n_days; ++d) {
    IntradayDay day;
    day.day_index = static_cast<std::int64_t>(d);
    day.date = synthetic_date(static_cast<std::int64_t>(d));
    if (d > 0) day.prior_close = p;
    day.log_prices.reserve(N + 1);
    day.log_prices.push_back(p);
    CompensatedSum iv;
    for (std::size_t k = 0; k < M; ++k) {
      const std::uint64_t c = static_cast<std::uint64_t>(d) * M + k;
      const double z1 = detail::std_normal(s1, c);
      const double vol = std::sqrt(V);
      iv.add(V * dt);
      p += vol * sdt * z1;
      if (dgp.xi > 0.0 || dgp.kappa > 0.0) {
        const double z2 = dgp.xi > 0.0 ? dgp.rho * z1 + rc * detail::std_normal(s2, c) : 0.0;
        V = std::max(0.0, V + dgp.kappa * (dgp.theta - V) * dt + dgp.xi * vol * sdt * z2);
      }
      if ((k + 1) % dgp.fine_ratio == 0) day.log_prices.push_back(p);
    }
    out.integrated_variance[d] = iv.value();
    out.days[d] = std::move(day);
  }
  return out;
}

// ---------------------------------------------------------------- studies

enum class StudyTest { DQ_OOS, DQ_IS, PZC_VaR, PZC_ES, ESR_auxiliary, ESR_strict, ESR_strict_intercept };

inline const char* to_string(StudyTest t) noexcept {
  switch (t) {
    case StudyTest::DQ_OOS: return "DQ_OOS";
    case StudyTest::DQ_IS: return "DQ_IS";
    case StudyTest::PZC_VaR: return "PZC_VaR";
    case StudyTest::PZC_ES: return "PZC_ES";
    case StudyTest::ESR_auxiliary: return "ESR_auxiliary";
    case StudyTest::ESR_strict: return "ESR_strict";
    case StudyTest::ESR_strict_intercept: return "ESR_strict_intercept";
  }
  return "?";
}

enum class ForecastSource { truth, fitted };

struct StudyConfig {
  std::size_t T = 2000;
  double alpha = 0.05;
  ForecastSource source = ForecastSource::truth;
  double forecast_scale = 1.0;  // multiplies (v, e) before testing
  EstimatorOptions estimator{};
  EsrOptions esr{};
  std::size_t dq_lags = 4;
  DqVariant dq_variant = DqVariant::CC;
  std::size_t threads = 0;
};

struct StudyResult {
  double rate = 0.0;
  double se = 0.0;
  std::size_t valid = 0;
  std::size_t reps = 0;
  std::size_t rejections = 0;
};

/// Rejection frequency over replications whose report is valid.
inline StudyResult rejection_rate(std::size_t reps, double level,
                                  const std::function<BacktestReport(std::size_t)>& run, std::size_t threads = 0) {
  std::vector<BacktestReport> reports(reps);
  parallel_for(reps, [&](std::size_t i) { reports[i] = run(i); }, threads ? threads : thread_count());
  StudyResult r;
  r.reps = reps;
  for (const auto& rep : reports) {
    if (!rep.valid) continue;
    ++r.valid;
    if (rep.rejects(level)) ++r.rejections;
  }
  if (r.valid > 0) {
    r.rate = static_cast<double>(r.rejections) / static_cast<double>(r.valid);
    r.se = std::sqrt(r.rate * (1.0 - r.rate) / static_cast<double>(r.valid));
  }
  return r;
}

/// One replication of `test` on data from `dgp` (seed decorrelated by `rep`).
inline BacktestReport study_replication(StudyTest test, const DgpSpec& dgp, const ModelSpec& spec, std::size_t rep,
                                        const StudyConfig& cfg) {
  DgpSpec d = dgp;
  d.seed = stream_seed(dgp.seed, 1000 + rep);
  const auto sim = simulate_daily(d, cfg.T, cfg.alpha);
  const auto data = sim.market();
  EstimatorOptions eo = cfg.estimator;
  eo.seed = stream_seed(eo.seed, rep);
  eo.threads = 1;
  ModelSpec s = spec;
  s.alpha = cfg.alpha;
  try {
    if (test == StudyTest::DQ_IS) {
      const auto fit = complete_estimation(s, data, eo);
      return dq_in_sample(fit, data, cfg.dq_variant, cfg.dq_lags);
    }
    std::vector<double> v = sim.true_v, e = sim.true_e;
    std::vector<double> r = data.returns;
    if (cfg.source == ForecastSource::fitted) {
      const auto fit = complete_estimation(s, data, eo);
      const auto path = filter_path(s, fit.params, data);
      v.assign(path.v.begin() + static_cast<std::ptrdiff_t>(eo.burn_in), path.v.end());
      if (s.has_es()) e.assign(path.e.begin() + static_cast<std::ptrdiff_t>(eo.burn_in), path.e.end());
      r.assign(data.returns.begin() + static_cast<std::ptrdiff_t>(eo.burn_in), data.returns.end());
      if (!s.has_es()) e.clear();
    }
    for (auto& x : v) x *= cfg.forecast_scale;
    for (auto& x : e) x *= cfg.forecast_scale;
    EsrOptions esr = cfg.esr;
    esr.seed = stream_seed(esr.seed, rep);
    esr.threads = 1;
    switch (test) {
      case StudyTest::DQ_OOS: return dq_out_of_sample(v, r, cfg.alpha, cfg.dq_variant, cfg.dq_lags);
      case StudyTest::PZC_VaR: return pzc_test(v, e, r, cfg.alpha, PzcTarget::VaR);
      case StudyTest::PZC_ES: return pzc_test(v, e, r, cfg.alpha, PzcTarget::ES);
      case StudyTest::ESR_auxiliary: return esr_test(v, e, r, cfg.alpha, EsrVariant::auxiliary, esr);
      case StudyTest::ESR_strict: return esr_test(v, e, r, cfg.alpha, EsrVariant::strict, esr);
      case StudyTest::ESR_strict_intercept: return esr_test(v, e, r, cfg.alpha, EsrVariant::strict_intercept, esr);
      case StudyTest::DQ_IS: break;
    }
  } catch (const NumericalError& ex) {
    return invalid_report(to_string(test), ex.what());
  }
  return invalid_report(to_string(test), "unsupported test");
}

/// Monte Carlo rejection frequency of `test` at `level`.
inline StudyResult size_study(StudyTest test, const DgpSpec& dgp, const ModelSpec& spec, std::size_t reps, double level,
                              const StudyConfig& cfg = {}) {
  if (reps < 100) throw ValidationError("size_study needs at least 100 replications");
  if (level < 0.0 || level > 1.0) throw ValidationError("size_study: level must lie in [0,1]");
  return rejection_rate(
      reps, level, [&](std::size_t i) { return study_replication(test, dgp, spec, i, cfg); }, cfg.threads);
}

}  // namespace tailrisk

#pragma once

// VaR/ES backtests: in-sample and out-of-sample dynamic quantile tests,
// regression calibration tests with HAC covariance, and ES regression tests.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/inference.hpp"
#include "tailrisk/loss_functions.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk {

enum class DqVariant { CC, ID };
enum class PzcTarget { VaR, ES };
enum class EsrVariant { auxiliary, strict, strict_intercept };

inline const char* to_string(DqVariant v) noexcept { return v == DqVariant::CC ? "CC" : "ID"; }
inline const char* to_string(PzcTarget t) noexcept { return t == PzcTarget::VaR ? "VaR" : "ES"; }
inline const char* to_string(EsrVariant v) noexcept {
  switch (v) {
    case EsrVariant::auxiliary: return "auxiliary";
    case EsrVariant::strict: return "strict";
    case EsrVariant::strict_intercept: return "strict_intercept";
  }
  return "?";
}

struct HitSeries {
  std::vector<double> values;  // I(r_t <= v_t) - alpha
  double alpha = 0.05;
  std::size_t q = 4;
};

inline HitSeries make_hits(std::span<const double> returns, std::span<const double> v, double alpha, std::size_t q = 4) {
  if (returns.size() != v.size()) throw ValidationError("hit series: returns and VaR lengths differ");
  HitSeries h;
  h.alpha = alpha;
  h.q = q;
  h.values.resize(returns.size());
  for (std::size_t t = 0; t < returns.size(); ++t) h.values[t] = (returns[t] <= v[t] ? 1.0 : 0.0) - alpha;
  return h;
}

struct BacktestReport {
  std::string test_name;
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
  bool valid = true;
  std::size_t design_columns = 0;  // regressor count; df can be smaller after rank reduction
  std::string failure_reason;

  bool rejects(double level) const noexcept { return valid && p_value < level; }
};

inline BacktestReport invalid_report(std::string name, std::string reason) {
  BacktestReport r;
  r.test_name = std::move(name);
  r.valid = false;
  r.p_value = std::numeric_limits<double>::quiet_NaN();
  r.statistic = std::numeric_limits<double>::quiet_NaN();
  r.failure_reason = std::move(reason);
  return r;
}

/// Bartlett-kernel HAC estimate (1/n)[G0 + sum_j w_j (Gj + Gj')] of the
/// long-run covariance of the rows of g, with w_j = 1 - j/(lags+1).
inline Eigen::MatrixXd newey_west(const Eigen::MatrixXd& g, std::size_t lags) {
  const auto n = g.rows();
  if (n == 0) throw ValidationError("newey_west: no observations");
  Eigen::MatrixXd s = g.transpose() * g;
  const auto L = std::min<Eigen::Index>(static_cast<Eigen::Index>(lags), n - 1);
  for (Eigen::Index j = 1; j <= L; ++j) {
    const double w = 1.0 - static_cast<double>(j) / (static_cast<double>(lags) + 1.0);
    const Eigen::MatrixXd gj = g.bottomRows(n - j).transpose() * g.topRows(n - j);
    s += w * (gj + gj.transpose());
  }
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------- DQ tests

/// Out-of-sample design: rows t = q..H-1 with (1, Hit_{t-1..t-q}, v_t); ID drops the constant.
inline Eigen::MatrixXd dq_oos_design(const HitSeries& hits, std::span<const double> v, DqVariant variant) {
  const std::size_t H = hits.values.size();
  const std::size_t q = hits.q;
  if (v.size() != H) throw ValidationError("DQ design: hits and VaR lengths differ");
  const std::size_t c0 = variant == DqVariant::CC ? 1 : 0;
  const std::size_t cols = c0 + q + 1;
  if (H <= q + cols) throw ValidationError("DQ: too few forecasts for " + std::to_string(q) + " hit lags");
  Eigen::MatrixXd X(static_cast<Eigen::Index>(H - q), static_cast<Eigen::Index>(cols));
  for (std::size_t t = q; t < H; ++t) {
    const auto row = static_cast<Eigen::Index>(t - q);
    std::size_t c = 0;
    if (c0) X(row, static_cast<Eigen::Index>(c++)) = 1.0;
    for (std::size_t j = 1; j <= q; ++j) X(row, static_cast<Eigen::Index>(c++)) = hits.values[t - j];
    X(row, static_cast<Eigen::Index>(c)) = v[t];
  }
  return X;
}

/// Hit' X (X'X)^+ X' Hit / (alpha(1-alpha)), referred to chi-squared with
/// df = rank(X). Rank-deficient designs use the orthogonal projection.
inline BacktestReport dq_from_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& hit, double alpha,
                                     std::string name) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  cod.setThreshold(1e-10);
  const auto rank = cod.rank();
  if (rank == 0) return invalid_report(std::move(name), "design matrix has rank zero");
  const Eigen::VectorXd beta = cod.solve(hit);
  const Eigen::VectorXd fitted = X * beta;
  BacktestReport r;
  r.test_name = std::move(name);
  r.statistic = std::max(0.0, hit.dot(fitted)) / (alpha * (1.0 - alpha));
  r.df = static_cast<std::size_t>(rank);
  r.design_columns = static_cast<std::size_t>(X.cols());
  r.p_value = chi2_sf(r.statistic, r.df);
  return r;
}

inline BacktestReport dq_out_of_sample(std::span<const double> v, std::span<const double> returns, double alpha,
                                       DqVariant variant = DqVariant::CC, std::size_t q = 4) {
  const std::string name = std::string(to_string(variant)) + "-DQ_OOS";
  const auto hits = make_hits(returns, v, alpha, q);
  const Eigen::MatrixXd X = dq_oos_design(hits, v, variant);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(hits.values.data() + q, static_cast<Eigen::Index>(hits.values.size() - q));
  return dq_from_design(X, y, alpha, name);
}

inline constexpr double kDqAbsorbedThreshold = 0.05;

/// In-sample DQ with the estimation-effect correction. `instruments` holds
/// extra columns aligned with the sample (value used in row t); when null the
/// contemporaneous VaR is the only instrument. A positive `absorbed_threshold`
/// drops directions whose variance share surviving the correction is below it
/// (df shrinks accordingly); zero gives the plain inverse of M M'.
inline BacktestReport dq_in_sample(std::span<const double> returns, std::span<const double> v,
                                   const Eigen::MatrixXd& dv, double alpha, DqVariant variant = DqVariant::CC,
                                   std::size_t q = 4, const std::vector<std::vector<double>>* instruments = nullptr,
                                   std::size_t burn_in = 0, double absorbed_threshold = kDqAbsorbedThreshold) {
  const std::string name = std::string(to_string(variant)) + "-DQ_IS";
  const std::size_t T = returns.size();
  if (v.size() != T || static_cast<std::size_t>(dv.rows()) != T) throw ValidationError("DQ_IS: inconsistent input lengths");
  std::vector<std::vector<double>> z;
  if (instruments) {
    z = *instruments;
  } else {
    z.emplace_back(v.begin(), v.end());
  }
  for (const auto& col : z) {
    if (col.size() != T) throw ValidationError("DQ_IS: instrument length differs from the sample");
  }
  const std::size_t c0 = variant == DqVariant::CC ? 1 : 0;
  const std::size_t k = c0 + q + z.size();
  if (burn_in >= T || T - burn_in <= q + k) throw ValidationError("DQ_IS: too few observations");
  const std::size_t first = burn_in + q;
  const auto n = static_cast<Eigen::Index>(T - first);
  const auto p = dv.cols();

  std::vector<double> hit(T);
  for (std::size_t t = 0; t < T; ++t) hit[t] = (returns[t] <= v[t] ? 1.0 : 0.0) - alpha;
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(k));
  Eigen::VectorXd y(n);
  Eigen::MatrixXd g(n, p);
  std::vector<double> absres(static_cast<std::size_t>(n));
  for (std::size_t t = first; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t - first);
    std::size_t c = 0;
    if (c0) X(row, static_cast<Eigen::Index>(c++)) = 1.0;
    for (std::size_t j = 1; j <= q; ++j) X(row, static_cast<Eigen::Index>(c++)) = hit[t - j];
    for (const auto& col : z) X(row, static_cast<Eigen::Index>(c++)) = col[t];
    y[row] = hit[t];
    g.row(row) = dv.row(static_cast<Eigen::Index>(t));
    absres[static_cast<std::size_t>(row)] = std::abs(returns[t] - v[t]);
  }
  const double ch = interpolated_order_statistic(absres, bandwidth_rank(alpha));
  if (!(ch > 0.0)) return invalid_report(name, "kernel bandwidth is zero");
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), p);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (absres[static_cast<std::size_t>(i)] < ch) {
      D.noalias() += g.row(i).transpose() * g.row(i);
      C.noalias() += X.row(i).transpose() * g.row(i);
    }
  }
  const double norm = 2.0 * static_cast<double>(n) * ch;
  D /= norm;
  C /= norm;
  const double dcond = detail::condition_number(D);
  if (!std::isfinite(dcond) || dcond >= kMaxCondition) return invalid_report(name, "D_hat is singular");
  const Eigen::MatrixXd M = X.transpose() - C * D.ldlt().solve(g.transpose());
  const Eigen::MatrixXd MM = M * M.transpose();
  const Eigen::VectorXd xh = X.transpose() * y;
  BacktestReport r;
  r.test_name = name;
  r.design_columns = k;
  if (absorbed_threshold <= 0.0) {
    const double mcond = detail::condition_number(MM);
    if (!std::isfinite(mcond) || mcond >= kMaxCondition) return invalid_report(name, "M M' is singular");
    r.statistic = std::max(0.0, xh.dot(MM.ldlt().solve(xh))) / (alpha * (1.0 - alpha));
    r.df = k;
  } else {
    // Whiten by X'X; eigenvalues of the whitened M M' are the shares of each
    // direction's variance that survive the estimation effect. Directions the
    // estimator has (almost) absorbed are dropped and df reduced to match.
    const Eigen::MatrixXd G = X.transpose() * X;
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) return invalid_report(name, "X'X is singular");
    const Eigen::MatrixXd L = llt.matrixL();
    const Eigen::MatrixXd W = L.triangularView<Eigen::Lower>().solve(
        L.triangularView<Eigen::Lower>().solve(MM).transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (W + W.transpose()));
    const Eigen::VectorXd hw = L.triangularView<Eigen::Lower>().solve(xh);
    double stat = 0.0;
    std::size_t df = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
      const double lam = es.eigenvalues()[i];
      if (!(lam >= absorbed_threshold)) continue;
      const double c = es.eigenvectors().col(i).dot(hw);
      stat += c * c / lam;
      ++df;
    }
    if (df == 0) return invalid_report(name, "every direction is absorbed by the estimation effect");
    r.statistic = stat / (alpha * (1.0 - alpha));
    r.df = df;
  }
  r.p_value = chi2_sf(r.statistic, r.df);
  return r;
}

inline BacktestReport dq_in_sample(const FitResult& fit, const MarketData& data, DqVariant variant = DqVariant::CC,
                                   std::size_t q = 4, double absorbed_threshold = kDqAbsorbedThreshold) {
  if (fit.spec.has_es()) throw ValidationError("DQ_IS applies to pure-VaR (EM) fits");
  const auto path = filter_path(fit.spec, fit.params, data);
  const auto grads = gradient_path(fit.spec, fit.params, data);
  return dq_in_sample(data.returns, path.v, grads.dv, fit.spec.alpha, variant, q, nullptr, fit.burn_in,
                      absorbed_threshold);
}

// ---------------------------------------------------------------- PZC tests

/// Standardized generalized residual for ES: I(r <= v) r / (alpha e) - 1.
inline double es_residual(double r, double v, double e, double alpha) {
  return (r <= v ? 1.0 : 0.0) * r / (alpha * e) - 1.0;
}

inline BacktestReport pzc_test(std::span<const double> v, std::span<const double> e, std::span<const double> returns,
                               double alpha, PzcTarget target, std::size_t nw_lags = 20) {
  const std::string name = std::string("PZC_") + to_string(target);
  const std::size_t T = returns.size();
  if (v.size() != T) throw ValidationError("PZC: VaR and return lengths differ");
  if (target == PzcTarget::ES && e.size() != T) throw ValidationError("PZC_ES needs ES forecasts");
  if (T < 10) throw ValidationError("PZC: too few observations");
  const auto n = static_cast<Eigen::Index>(T - 1);
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (std::size_t t = 1; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t - 1);
    const double lv_lag = (returns[t - 1] <= v[t - 1] ? 1.0 : 0.0) - alpha;
    X(row, 0) = 1.0;
    X(row, 1) = lv_lag;
    if (target == PzcTarget::VaR) {
      X(row, 2) = v[t];
      y[row] = (returns[t] <= v[t] ? 1.0 : 0.0) - alpha;
    } else {
      X(row, 2) = e[t];
      y[row] = es_residual(returns[t], v[t], e[t], alpha);
    }
  }
  const Eigen::MatrixXd Q = X.transpose() * X / static_cast<double>(n);
  const double cond = detail::condition_number(Q);
  if (!std::isfinite(cond) || cond >= kMaxCondition) return invalid_report(name, "collinear regressors");
  const Eigen::VectorXd a = Q.ldlt().solve(X.transpose() * y / static_cast<double>(n));
  const Eigen::VectorXd u = y - X * a;
  const Eigen::MatrixXd G = X.array().colwise() * u.array();
  const Eigen::MatrixXd S = newey_west(G, nw_lags);
  const Eigen::MatrixXd Qi = Q.inverse();
  Eigen::MatrixXd omega = Qi * S * Qi / static_cast<double>(n);
  omega = 0.5 * (omega + omega.transpose());
  const double ocond = detail::condition_number(omega);
  if (!std::isfinite(ocond) || ocond >= 1e14) return invalid_report(name, "singular HAC covariance");
  BacktestReport r;
  r.test_name = name;
  r.statistic = std::max(0.0, a.dot(omega.ldlt().solve(a)));
  r.df = 3;
  r.design_columns = 3;
  r.p_value = chi2_sf(r.statistic, r.df);
  return r;
}

// ---------------------------------------------------------------- ESR tests

struct EsrOptions {
  Loss loss = Loss::FZ0;
  std::size_t n_perturb = 1000;
  std::size_t m_keep = 10;
  std::size_t max_alternations = 20;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
};

struct EsrFit {
  Eigen::VectorXd theta;  // (beta, gamma), intercepts on the original return scale
  CovarianceReport cov;
  double shift = 0.0;
  std::size_t n_beta = 0;
};

namespace detail {

struct EsrDesign {
  std::vector<double> y;  // shifted response
  Eigen::MatrixXd xq, xe;
};

inline EsrDesign esr_design(std::span<const double> v, std::span<const double> e, std::span<const double> returns,
                            EsrVariant variant, double shift) {
  const std::size_t T = returns.size();
  EsrDesign d;
  d.y.resize(T);
  const bool intercept_only = variant == EsrVariant::strict_intercept;
  const Eigen::Index k = intercept_only ? 1 : 2;
  d.xq.resize(static_cast<Eigen::Index>(T), k);
  d.xe.resize(static_cast<Eigen::Index>(T), k);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    d.y[t] = (intercept_only ? returns[t] - e[t] : returns[t]) - shift;
    d.xq(row, 0) = 1.0;
    d.xe(row, 0) = 1.0;
    if (!intercept_only) {
      d.xq(row, 1) = variant == EsrVariant::auxiliary ? v[t] : e[t];
      d.xe(row, 1) = e[t];
    }
  }
  return d;
}

}  // namespace detail

/// Fits the linear (VaR, ES) regression system by minimizing the joint loss and
/// computes its sandwich covariance.
inline EsrFit esr_fit(std::span<const double> v, std::span<const double> e, std::span<const double> returns,
                      double alpha, EsrVariant variant, const EsrOptions& opt = {}) {
  const std::size_t T = returns.size();
  if (e.size() != T) throw ValidationError("ESR needs ES forecasts aligned with returns");
  if (variant == EsrVariant::auxiliary && v.size() != T) throw ValidationError("auxiliary ESR needs VaR forecasts");
  if (opt.loss == Loss::EM) throw ValidationError("ESR needs a joint loss");
  if (T < 50) throw ValidationError("ESR: too few observations");
  std::vector<double> raw(T);
  for (std::size_t t = 0; t < T; ++t) raw[t] = variant == EsrVariant::strict_intercept ? returns[t] - e[t] : returns[t];
  // FZ0 needs negative ES; translating the response to lie below zero keeps every
  // tail mean negative and is undone on the intercepts afterwards. ALS is only
  // consistent for zero-mean responses, so its response is left in place.
  const double shift = opt.loss == Loss::FZ0 ? *std::max_element(raw.begin(), raw.end()) : 0.0;
  const auto d = detail::esr_design(v, e, returns, variant, shift);
  const Eigen::Index kq = d.xq.cols(), ke = d.xe.cols();
  const Eigen::Index np = kq + ke;

  const Loss loss = opt.loss;
  optim::Objective f = [&d, kq, ke, np, alpha, loss, T](const Eigen::VectorXd& th, Eigen::VectorXd* grad) {
    if (grad) grad->setZero(np);
    const Eigen::VectorXd vv = d.xq * th.head(kq);
    const Eigen::VectorXd ee = d.xe * th.tail(ke);
    const double emax = ee.maxCoeff();
    if (!(emax < 0.0) || !ee.allFinite() || !vv.allFinite()) return kPenalty + (std::isfinite(emax) ? std::max(emax, 0.0) : 1.0);
    CompensatedSum s;
    for (std::size_t t = 0; t < T; ++t) {
      const auto row = static_cast<Eigen::Index>(t);
      s.add(score(loss, d.y[t], vv[row], ee[row], alpha));
      if (grad) {
        const auto sg = score_gradient(loss, d.y[t], vv[row], ee[row], alpha);
        grad->head(kq) += sg.dv * d.xq.row(row).transpose();
        grad->tail(ke) += sg.de * d.xe.row(row).transpose();
      }
    }
    if (grad) *grad /= static_cast<double>(T);
    return s.value() / static_cast<double>(T);
  };

  const double sd = std::sqrt(sample_variance(d.y));
  Eigen::VectorXd start(np);
  if (variant == EsrVariant::strict_intercept) {
    const double qy = empirical_quantile(d.y, alpha);
    CompensatedSum tail;
    std::size_t cnt = 0;
    for (double y : d.y) {
      if (y <= qy) {
        tail.add(y);
        ++cnt;
      }
    }
    start << qy, tail.value() / static_cast<double>(std::max<std::size_t>(cnt, 1));
  } else {
    start << -shift, 1.0, -shift, 1.0;
  }
  SamplingBox box{Eigen::VectorXd(np), Eigen::VectorXd(np)};
  for (Eigen::Index i = 0; i < np; ++i) {
    const bool intercept = i == 0 || i == kq;
    const double half = intercept ? sd : 0.5;
    box.lo[i] = start[i] - half;
    box.hi[i] = start[i] + half;
  }
  EstimatorOptions eo;
  eo.n_starts = opt.n_perturb;
  eo.m_keep = opt.m_keep;
  eo.seed = opt.seed;
  eo.max_alternations = opt.max_alternations;
  eo.threads = opt.threads;
  const auto out = multistart_minimize(f, box, eo, {start});

  EsrFit fit;
  fit.n_beta = static_cast<std::size_t>(kq);
  fit.shift = shift;
  const Eigen::VectorXd vv = d.xq * out.x.head(kq);
  const Eigen::VectorXd ee = d.xe * out.x.tail(ke);
  JointOptions jo;
  jo.bandwidth = joint_bandwidth(T) * sd;
  const Eigen::MatrixXd gv = [&] {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), np);
    m.leftCols(kq) = d.xq;
    return m;
  }();
  const Eigen::MatrixXd ge = [&] {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), np);
    m.rightCols(ke) = d.xe;
    return m;
  }();
  std::vector<double> vstd(vv.data(), vv.data() + vv.size()), estd(ee.data(), ee.data() + ee.size());
  fit.cov = cov_joint(d.y, vstd, estd, gv, ge, alpha, loss, 0, jo);
  fit.theta = out.x;
  fit.theta[0] += shift;
  fit.theta[kq] += shift;
  return fit;
}

inline BacktestReport esr_test(std::span<const double> v, std::span<const double> e, std::span<const double> returns,
                               double alpha, EsrVariant variant, const EsrOptions& opt = {}) {
  const std::string name = std::string("ESR_") + to_string(variant);
  EsrFit fit;
  try {
    fit = esr_fit(v, e, returns, alpha, variant, opt);
  } catch (const NumericalError& ex) {
    return invalid_report(name, ex.what());
  }
  const auto kq = static_cast<std::size_t>(fit.n_beta);
  try {
    WaldResult w;
    if (variant == EsrVariant::strict_intercept) {
      // Two-sided t-test of the ES intercept; t^2 against chi-squared(1).
      w = wald_test(fit.theta, fit.cov.sigma, {kq});
    } else {
      Eigen::VectorXd null(2);
      null << 0.0, 1.0;
      w = wald_test(fit.theta, fit.cov.sigma, {kq, kq + 1}, null);
    }
    BacktestReport r;
    r.test_name = name;
    r.statistic = w.statistic;
    r.df = w.df;
    r.p_value = w.p_value;
    return r;
  } catch (const NumericalError& ex) {
    return invalid_report(name, ex.what());
  }
}

}  // namespace tailrisk

#pragma once

// Sandwich covariance estimates for the fitted coefficients and Wald tests.

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/loss_functions.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk {

inline constexpr double kMaxCondition = 1e12;

struct CovarianceReport {
  Eigen::MatrixXd sigma;
  Eigen::VectorXd se;
  double bandwidth = 0.0;
  Eigen::MatrixXd A_hat;
  Eigen::MatrixXd D_hat;
  double condition = 0.0;  // of the symmetrized D_hat
  std::size_t n_obs = 0;
};

/// Order-statistic rank for the quantile-model bandwidth: 40 at alpha=0.01,
/// 60 at alpha=0.05, linear in between (and beyond).
inline double bandwidth_rank(double alpha) { return 40.0 + (alpha - 0.01) * (20.0 / 0.04); }

/// The k-th order statistic (1-based) of xs, linearly interpolated for
/// fractional k and clamped to [1, n].
inline double interpolated_order_statistic(std::vector<double> xs, double k) {
  if (xs.empty()) throw ValidationError("order statistic of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double kk = std::clamp(k, 1.0, static_cast<double>(xs.size()));
  const auto lo = static_cast<std::size_t>(std::floor(kk));
  const auto hi = static_cast<std::size_t>(std::ceil(kk));
  const double w = kk - static_cast<double>(lo);
  return xs[lo - 1] + w * (xs[hi - 1] - xs[lo - 1]);
}

namespace detail {

inline double condition_number(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return 0.0;
  const double smin = s[s.size() - 1];
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s[0] / smin;
}

inline void finish_sandwich(CovarianceReport& rep, double extra_factor = 1.0) {
  const Eigen::MatrixXd Ds = 0.5 * (rep.D_hat + rep.D_hat.transpose());
  rep.condition = condition_number(Ds);
  if (!std::isfinite(rep.condition) || rep.condition >= kMaxCondition) {
    std::ostringstream os;
    os << "D_hat is singular or ill-conditioned (condition number " << rep.condition << ")";
    throw NumericalError(os.str());
  }
  const Eigen::MatrixXd Dinv = Ds.inverse();
  Eigen::MatrixXd sigma = extra_factor * Dinv * rep.A_hat * Dinv / static_cast<double>(rep.n_obs);
  rep.sigma = 0.5 * (sigma + sigma.transpose());
  rep.se = rep.sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
}

inline void check_lengths(std::size_t T, std::span<const double> v, const Eigen::MatrixXd& dv, std::size_t burn_in) {
  if (v.size() != T || static_cast<std::size_t>(dv.rows()) != T) {
    throw ValidationError("covariance inputs have inconsistent lengths");
  }
  if (burn_in >= T) throw ValidationError("burn-in leaves no observations");
}

}  // namespace detail

struct PureVarOptions {
  /// Multiply the sandwich by alpha(1-alpha) a second time.
  bool repeat_alpha_factor = false;
  std::optional<double> rank_override;
};

/// Quantile-model sandwich: A = alpha(1-alpha) mean(grad v grad v'), D from the
/// uniform kernel with the order-statistic bandwidth.
inline CovarianceReport cov_pure_var(std::span<const double> returns, std::span<const double> v,
                                     const Eigen::MatrixXd& dv, double alpha, std::size_t burn_in = 0,
                                     const PureVarOptions& opt = {}) {
  const std::size_t T = returns.size();
  detail::check_lengths(T, v, dv, burn_in);
  const std::size_t n = T - burn_in;
  const auto p = dv.cols();
  std::vector<double> absres(n);
  for (std::size_t t = burn_in; t < T; ++t) absres[t - burn_in] = std::abs(returns[t] - v[t]);
  CovarianceReport rep;
  rep.n_obs = n;
  rep.bandwidth = interpolated_order_statistic(absres, opt.rank_override.value_or(bandwidth_rank(alpha)));
  if (!(rep.bandwidth > 0.0)) throw NumericalError("quantile bandwidth is zero");
  const Eigen::MatrixXd g = dv.bottomRows(static_cast<Eigen::Index>(n));
  rep.A_hat = alpha * (1.0 - alpha) * (g.transpose() * g) / static_cast<double>(n);
  rep.D_hat = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < n; ++i) {
    if (absres[i] < rep.bandwidth) {
      const auto row = g.row(static_cast<Eigen::Index>(i));
      rep.D_hat.noalias() += row.transpose() * row;
    }
  }
  rep.D_hat /= 2.0 * static_cast<double>(n) * rep.bandwidth;
  detail::finish_sandwich(rep, opt.repeat_alpha_factor ? alpha * (1.0 - alpha) : 1.0);
  return rep;
}

inline CovarianceReport cov_pure_var(const FitResult& fit, const MarketData& data, const PureVarOptions& opt = {}) {
  if (fit.spec.has_es()) throw ValidationError("cov_pure_var needs a pure-VaR (EM) fit");
  const auto path = filter_path(fit.spec, fit.params, data);
  const auto grads = gradient_path(fit.spec, fit.params, data);
  return cov_pure_var(data.returns, path.v, grads.dv, fit.spec.alpha, fit.burn_in, opt);
}

enum class JointDForm {
  quantile_outer,  // kernel term uses grad v grad v'
  printed_cross,   // kernel term uses grad e grad v', symmetrized
};

struct JointOptions {
  JointDForm d_form = JointDForm::quantile_outer;
  std::optional<double> bandwidth;  // default T^(-1/3)
};

inline double joint_bandwidth(std::size_t n) { return std::pow(static_cast<double>(n), -1.0 / 3.0); }

/// Joint (VaR, ES) sandwich with A = mean(lambda lambda') from the estimation loss.
inline CovarianceReport cov_joint(std::span<const double> returns, std::span<const double> v, std::span<const double> e,
                                  const Eigen::MatrixXd& dv, const Eigen::MatrixXd& de, double alpha, Loss loss,
                                  std::size_t burn_in = 0, const JointOptions& opt = {}) {
  if (loss == Loss::EM) throw ValidationError("cov_joint needs the ALS or FZ0 loss");
  const std::size_t T = returns.size();
  detail::check_lengths(T, v, dv, burn_in);
  if (e.size() != T || de.rows() != dv.rows() || de.cols() != dv.cols()) {
    throw ValidationError("covariance inputs have inconsistent lengths");
  }
  const std::size_t n = T - burn_in;
  const auto p = dv.cols();
  CovarianceReport rep;
  rep.n_obs = n;
  rep.bandwidth = opt.bandwidth.value_or(joint_bandwidth(n));
  rep.A_hat = Eigen::MatrixXd::Zero(p, p);
  rep.D_hat = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd lambda(p);
  for (std::size_t t = burn_in; t < T; ++t) {
    const auto gv = dv.row(static_cast<Eigen::Index>(t)).transpose();
    const auto ge = de.row(static_cast<Eigen::Index>(t)).transpose();
    const auto sg = score_gradient(loss, returns[t], v[t], e[t], alpha);
    lambda = sg.dv * gv + sg.de * ge;
    rep.A_hat.noalias() += lambda * lambda.transpose();
    if (std::abs(returns[t] - v[t]) < rep.bandwidth) {
      const double w = 1.0 / (2.0 * rep.bandwidth * -alpha * e[t]);
      if (opt.d_form == JointDForm::quantile_outer) {
        rep.D_hat.noalias() += w * gv * gv.transpose();
      } else {
        rep.D_hat.noalias() += w * ge * gv.transpose();
      }
    }
    rep.D_hat.noalias() += ge * ge.transpose() / (e[t] * e[t]);
  }
  rep.A_hat /= static_cast<double>(n);
  rep.D_hat /= static_cast<double>(n);
  detail::finish_sandwich(rep);
  return rep;
}

inline CovarianceReport cov_joint(const FitResult& fit, const MarketData& data, const JointOptions& opt = {}) {
  if (!fit.spec.has_es()) throw ValidationError("cov_joint needs a joint (VaR, ES) fit");
  const auto path = filter_path(fit.spec, fit.params, data);
  const auto grads = gradient_path(fit.spec, fit.params, data);
  return cov_joint(data.returns, path.v, path.e, grads.dv, grads.de, fit.spec.alpha, fit.spec.loss, fit.burn_in, opt);
}

struct WaldResult {
  double statistic = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

inline double chi2_sf(double x, std::size_t df) {
  if (df == 0) throw ValidationError("chi-squared with zero degrees of freedom");
  if (!(x > 0.0)) return 1.0;
  if (!std::isfinite(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(static_cast<double>(df)), x));
}

/// W = (R theta - r0)' (R Sigma R')^{-1} (R theta - r0) for the coordinate
/// selection R given by `indices`; r0 defaults to zero.
inline WaldResult wald_test(const Eigen::VectorXd& theta, const Eigen::MatrixXd& sigma,
                            const std::vector<std::size_t>& indices, const Eigen::VectorXd& null_values = {}) {
  const auto p = static_cast<std::size_t>(theta.size());
  if (indices.empty()) throw ValidationError("wald_test: empty restriction set");
  if (sigma.rows() != theta.size() || sigma.cols() != theta.size()) {
    throw ValidationError("wald_test: covariance dimension does not match the parameter vector");
  }
  if (null_values.size() != 0 && static_cast<std::size_t>(null_values.size()) != indices.size()) {
    throw ValidationError("wald_test: null values do not match the restriction count");
  }
  const auto q = static_cast<Eigen::Index>(indices.size());
  Eigen::VectorXd diff(q);
  Eigen::MatrixXd S(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const auto ii = indices[static_cast<std::size_t>(i)];
    if (ii >= p) throw ValidationError("wald_test: restricted index out of range");
    diff[i] = theta[static_cast<Eigen::Index>(ii)] - (null_values.size() ? null_values[i] : 0.0);
    for (Eigen::Index j = 0; j < q; ++j) {
      S(i, j) = sigma(static_cast<Eigen::Index>(ii), static_cast<Eigen::Index>(indices[static_cast<std::size_t>(j)]));
    }
  }
  const double cond = detail::condition_number(S);
  if (!std::isfinite(cond) || cond >= 1e14) throw NumericalError("wald_test: restricted covariance is singular");
  WaldResult res;
  res.df = static_cast<std::size_t>(q);
  res.statistic = diff.allFinite() && diff.isZero(0.0) ? 0.0 : std::max(0.0, diff.dot(S.ldlt().solve(diff)));
  res.p_value = chi2_sf(res.statistic, res.df);
  return res;
}

inline WaldResult wald_test(const FitResult& fit, const CovarianceReport& cov, const std::vector<std::size_t>& indices) {
  return wald_test(to_vector(fit.spec, fit.params), cov.sigma, indices);
}

/// Indices of the named coefficients, e.g. {"a1","a2","a3"}.
inline std::vector<std::size_t> coefficient_indices(const ModelSpec& spec, const std::vector<std::string>& names) {
  const auto l = layout(spec);
  std::vector<std::size_t> out;
  for (const auto& nm : names) {
    const int i = l.index_of(nm);
    if (i < 0) throw ValidationError("model " + spec.name() + " has no coefficient " + nm);
    out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

}  // namespace tailrisk

#pragma once

// Daily realized variance and higher-moment estimators from regular intraday
// log-price grids, plus the skewness/kurtosis outlier filter.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tailrisk/common.hpp"

namespace tailrisk {

/// One trading day's regular grid of N+1 intraday log-prices.
struct IntradayDay {
  std::int64_t day_index = 0;
  std::string date;
  std::vector<double> log_prices;
  std::optional<double> prior_close;
  bool gap = false;  // slot indices were not consecutive in the source

  std::size_t n_returns() const noexcept {
    return log_prices.empty() ? 0 : log_prices.size() - 1;
  }

  std::vector<double> returns() const {
    std::vector<double> r;
    if (log_prices.size() < 2) return r;
    r.reserve(log_prices.size() - 1);
    for (std::size_t i = 1; i < log_prices.size(); ++i) r.push_back(log_prices[i] - log_prices[i - 1]);
    return r;
  }
};

enum class VarianceKind { RV, BPV, SV_POS, SV_NEG, MED };

inline std::size_t minimum_returns(VarianceKind kind) noexcept {
  return kind == VarianceKind::MED ? 3 : 2;
}

inline const char* to_string(VarianceKind kind) noexcept {
  switch (kind) {
    case VarianceKind::RV: return "RV";
    case VarianceKind::BPV: return "BPV";
    case VarianceKind::SV_POS: return "SV_POS";
    case VarianceKind::SV_NEG: return "SV_NEG";
    case VarianceKind::MED: return "MED";
  }
  return "?";
}

/// Median-truncation constant pi / (6 - 4 sqrt(3) + pi).
inline double med_constant() noexcept {
  return std::numbers::pi / (6.0 - 4.0 * std::numbers::sqrt3 + std::numbers::pi);
}

/// Realized variance estimator of the given kind on a vector of intraday returns.
inline double realized_variance(std::span<const double> r, VarianceKind kind) {
  const std::size_t n = r.size();
  if (n < minimum_returns(kind)) {
    throw ValidationError(std::string("realized_variance(") + to_string(kind) + ") needs N >= " +
                          std::to_string(minimum_returns(kind)) + " intraday returns, got " +
                          std::to_string(n));
  }
  const double nd = static_cast<double>(n);
  CompensatedSum s;
  switch (kind) {
    case VarianceKind::RV:
      for (double x : r) s.add(x * x);
      return s.value();
    case VarianceKind::SV_POS:
      for (double x : r) {
        if (x > 0.0) s.add(x * x);
      }
      return s.value();
    case VarianceKind::SV_NEG:
      for (double x : r) {
        if (x < 0.0) s.add(x * x);
      }
      return s.value();
    case VarianceKind::BPV:
      for (std::size_t i = 0; i + 1 < n; ++i) s.add(std::abs(r[i]) * std::abs(r[i + 1]));
      return std::numbers::pi / 2.0 * nd / (nd - 1.0) * s.value();
    case VarianceKind::MED:
      for (std::size_t i = 1; i + 1 < n; ++i) {
        double a = std::abs(r[i - 1]), b = std::abs(r[i]), c = std::abs(r[i + 1]);
        const double med = std::max(std::min(a, b), std::min(std::max(a, b), c));
        s.add(med * med);
      }
      return med_constant() * nd / (nd - 2.0) * s.value();
  }
  throw ValidationError("unknown variance kind");
}

inline double realized_variance(const IntradayDay& day, VarianceKind kind) {
  const auto r = day.returns();
  return realized_variance(r, kind);
}

/// Integrated k-th moment estimator sum_i r_i^k, k in {3,4}.
inline double acjv_moment(std::span<const double> r, int k) {
  if (k != 3 && k != 4) throw ValidationError("acjv_moment supports k = 3 or 4, got " + std::to_string(k));
  CompensatedSum s;
  for (double x : r) s.add(k == 3 ? x * x * x : x * x * x * x);
  return s.value();
}

inline double acjv_moment(const IntradayDay& day, int k) {
  const auto r = day.returns();
  return acjv_moment(r, k);
}

struct NpMoments {
  double mu3 = 0.0;
  double mu4 = 0.0;
};

namespace detail {

// One day's contribution to the third and fourth moment sums. Grid positions
// before the first slot are padded with the prior close when available, else
// with the day's first price; trend terms do not cross day boundaries.
inline NpMoments np_day_sums(const IntradayDay& day) {
  const auto& x = day.log_prices;
  const std::size_t n = day.n_returns();
  if (n < 1) throw ValidationError("np_moments: day " + day.date + " has no intraday returns");
  const double pad = day.prior_close.value_or(x.front());
  auto price = [&](std::ptrdiff_t k) { return k < 0 ? pad : x[static_cast<std::size_t>(k)]; };
  const double inv_n = 1.0 / static_cast<double>(n);
  CompensatedSum s3, s4;
  for (std::size_t i = 1; i <= n; ++i) {
    const double last = x[i - 1];
    double y = 0.0, z = 0.0;
    for (std::size_t j = 1; j <= n; ++j) {
      const double d = last - price(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(j));
      y += d;
      z += d * d;
    }
    y *= inv_n;
    z *= inv_n;
    const double r = x[i] - x[i - 1];
    const double r2 = r * r;
    s3.add(r2 * r + 3.0 * y * r2);
    s4.add(r2 * r2 + 4.0 * y * r2 * r + 6.0 * z * r2);
  }
  return {s3.value(), s4.value()};
}

}  // namespace detail

/// Neuberger-Payne third and fourth moment estimators averaged over a window of tau days.
inline NpMoments np_moments(std::span<const IntradayDay> days, int tau) {
  if (tau < 1) throw ValidationError("np_moments: tau must be >= 1");
  if (days.size() != static_cast<std::size_t>(tau)) {
    throw ValidationError("np_moments: window must contain exactly tau = " + std::to_string(tau) +
                          " days, got " + std::to_string(days.size()));
  }
  CompensatedSum s3, s4;
  for (const auto& d : days) {
    const auto m = detail::np_day_sums(d);
    s3.add(m.mu3);
    s4.add(m.mu4);
  }
  return {s3.value() / tau, s4.value() / tau};
}

struct StandardizedMoments {
  double sk = 0.0;
  double ku = 0.0;
};

/// Skewness and kurtosis from raw moments under the zero-conditional-mean convention.
inline StandardizedMoments standardize_moments(double mu2, double mu3, double mu4) {
  if (!(mu2 > 0.0)) throw ValidationError("standardize_moments: variance must be positive");
  return {mu3 / std::pow(mu2, 1.5), mu4 / (mu2 * mu2)};
}

/// Mean-corrected variant. mu2..mu4 are non-centered moments.
inline StandardizedMoments standardize_moments_centered(double mu1, double mu2, double mu3, double mu4) {
  const double var = mu2 - mu1 * mu1;
  if (!(var > 0.0)) throw ValidationError("standardize_moments: variance must be positive");
  const double m1_2 = mu1 * mu1;
  const double c3 = mu3 - 3.0 * mu1 * mu2 + 2.0 * m1_2 * mu1;
  const double c4 = mu4 - 4.0 * mu3 * mu1 + 6.0 * mu2 * m1_2 - 3.0 * m1_2 * m1_2;
  return {c3 / std::pow(var, 1.5), c4 / (var * var)};
}

/// Realized measures for one day.
struct RealizedDay {
  std::string date;
  double rv = 0.0;
  double mu3 = 0.0;
  double mu4 = 0.0;
  double sk = 0.0;
  double ku = 0.0;
  double sk_neg = 0.0;
  double sk_pos = 0.0;
  bool filtered = false;
};

using RealizedSeries = std::vector<RealizedDay>;

inline void split_skewness(RealizedDay& d) noexcept {
  d.sk_pos = d.sk > 0.0 ? d.sk : 0.0;
  d.sk_neg = d.sk < 0.0 ? -d.sk : 0.0;
}

struct MeasureOptions {
  VarianceKind variance = VarianceKind::MED;
  int tau = 5;
  bool mean_corrected = false;
};

/// Builds the realized series for days [tau-1, n). Standardization uses the
/// tau-day average of plain realized variance (the second-moment counterpart of
/// the moment sums); the `rv` column holds the selected daily estimator.
/// Days whose moments cannot be standardized get NaN sk/ku, which the filter replaces.
inline RealizedSeries compute_realized_series(std::span<const IntradayDay> days,
                                              const MeasureOptions& opt = {}) {
  if (opt.tau < 1) throw ValidationError("tau must be >= 1");
  const auto tau = static_cast<std::size_t>(opt.tau);
  RealizedSeries out;
  if (days.size() < tau) return out;
  std::vector<double> plain_rv(days.size()), day_ret(days.size());
  for (std::size_t t = 0; t < days.size(); ++t) {
    const auto r = days[t].returns();
    plain_rv[t] = realized_variance(r, VarianceKind::RV);
    CompensatedSum s;
    for (double x : r) s.add(x);
    day_ret[t] = s.value();
  }
  out.reserve(days.size() - tau + 1);
  for (std::size_t t = tau - 1; t < days.size(); ++t) {
    RealizedDay d;
    d.date = days[t].date;
    d.rv = realized_variance(days[t], opt.variance);
    const auto np = np_moments(days.subspan(t + 1 - tau, tau), opt.tau);
    d.mu3 = np.mu3;
    d.mu4 = np.mu4;
    double mu2 = 0.0, mu1 = 0.0;
    for (std::size_t j = t + 1 - tau; j <= t; ++j) {
      mu2 += plain_rv[j];
      mu1 += day_ret[j];
    }
    mu2 /= static_cast<double>(tau);
    mu1 /= static_cast<double>(tau);
    try {
      const auto st = opt.mean_corrected ? standardize_moments_centered(mu1, mu2, d.mu3, d.mu4)
                                         : standardize_moments(mu2, d.mu3, d.mu4);
      d.sk = st.sk;
      d.ku = st.ku;
    } catch (const ValidationError&) {
      d.sk = std::numeric_limits<double>::quiet_NaN();
      d.ku = std::numeric_limits<double>::quiet_NaN();
    }
    split_skewness(d);
    out.push_back(std::move(d));
  }
  return out;
}

inline constexpr double kSkewBound = 15.0;
inline constexpr double kKurtUpper = 20.0;

inline bool skew_in_range(double sk) noexcept { return sk > -kSkewBound && sk < kSkewBound; }
inline bool kurt_in_range(double ku) noexcept { return ku > 0.0 && ku < kKurtUpper; }

namespace detail {

struct Ar1Fit {
  double mean = 0.0;
  double phi = 0.0;
};

// Least-squares AR(1) on pairs of consecutive unflagged values.
inline std::optional<Ar1Fit> fit_ar1(std::span<const double> x, const std::vector<bool>& bad) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t t = 1; t < x.size(); ++t) {
    if (bad[t] || bad[t - 1]) continue;
    sx += x[t - 1];
    sy += x[t];
    sxx += x[t - 1] * x[t - 1];
    sxy += x[t - 1] * x[t];
    ++n;
  }
  if (n < 3) return std::nullopt;
  const double nd = static_cast<double>(n);
  const double vxx = sxx - sx * sx / nd;
  if (!(vxx > 0.0)) return std::nullopt;
  const double phi = (sxy - sx * sy / nd) / vxx;
  if (!(std::abs(phi) < 1.0) || !std::isfinite(phi)) return std::nullopt;
  const double c = (sy - phi * sx) / nd;
  return Ar1Fit{c / (1.0 - phi), phi};
}

// Fills flagged runs of x. Interior runs use the AR(1) bridge expectation
// between their anchors; edge runs use the AR(1) forecast/backcast from the
// single anchor. Runs whose AR(1) values fall out of range use linear
// interpolation (or the nearest anchor at the edges).
template <class InRange>
void interpolate_runs(std::vector<double>& x, const std::vector<bool>& bad, InRange in_range) {
  const std::size_t n = x.size();
  const auto fit = fit_ar1(x, bad);
  std::size_t t = 0;
  while (t < n) {
    if (!bad[t]) {
      ++t;
      continue;
    }
    const std::size_t start = t;
    while (t < n && bad[t]) ++t;
    const std::size_t end = t;  // one past the run
    const bool has_left = start > 0;
    const bool has_right = end < n;
    std::vector<double> fill(end - start);
    bool ok = false;
    if (fit) {
      const double mu = fit->mean, phi = fit->phi;
      ok = true;
      for (std::size_t i = start; i < end; ++i) {
        double val;
        if (has_left && has_right) {
          const double ya = x[start - 1] - mu, yb = x[end] - mu;
          const auto k = static_cast<double>(i - (start - 1));
          const auto m = static_cast<double>(end - (start - 1));
          const double den = 1.0 - std::pow(phi, 2.0 * m);
          val = mu + ((std::pow(phi, k) - std::pow(phi, 2.0 * m - k)) * ya +
                      (std::pow(phi, m - k) - std::pow(phi, m + k)) * yb) / den;
        } else if (has_left) {
          val = mu + std::pow(phi, static_cast<double>(i - (start - 1))) * (x[start - 1] - mu);
        } else {
          val = mu + std::pow(phi, static_cast<double>(end - i)) * (x[end] - mu);
        }
        if (!std::isfinite(val) || !in_range(val)) {
          ok = false;
          break;
        }
        fill[i - start] = val;
      }
    }
    if (!ok) {
      for (std::size_t i = start; i < end; ++i) {
        if (has_left && has_right) {
          const double w = static_cast<double>(i - (start - 1)) / static_cast<double>(end - (start - 1));
          fill[i - start] = (1.0 - w) * x[start - 1] + w * x[end];
        } else {
          fill[i - start] = has_left ? x[start - 1] : x[end];
        }
      }
    }
    for (std::size_t i = start; i < end; ++i) x[i] = fill[i - start];
  }
}

}  // namespace detail

/// Replaces skewness outside (-15,15) and kurtosis outside (0,20) by AR(1)-aware
/// interpolation; replaced days are flagged and unflagged values are untouched.
inline RealizedSeries filter_and_interpolate(const RealizedSeries& series) {
  if (series.empty()) throw ValidationError("filter_and_interpolate: empty series");
  const std::size_t n = series.size();
  std::vector<double> sk(n), ku(n);
  std::vector<bool> bad_sk(n), bad_ku(n);
  bool any_good_sk = false, any_good_ku = false;
  for (std::size_t t = 0; t < n; ++t) {
    sk[t] = series[t].sk;
    ku[t] = series[t].ku;
    bad_sk[t] = !skew_in_range(sk[t]);
    bad_ku[t] = !kurt_in_range(ku[t]);
    any_good_sk = any_good_sk || !bad_sk[t];
    any_good_ku = any_good_ku || !bad_ku[t];
  }
  if (!any_good_sk || !any_good_ku) {
    throw ValidationError("filter_and_interpolate: every value out of range, no anchor points");
  }
  detail::interpolate_runs(sk, bad_sk, skew_in_range);
  detail::interpolate_runs(ku, bad_ku, kurt_in_range);
  RealizedSeries out = series;
  for (std::size_t t = 0; t < n; ++t) {
    if (bad_sk[t]) out[t].sk = sk[t];
    if (bad_ku[t]) out[t].ku = ku[t];
    if (bad_sk[t] || bad_ku[t]) {
      out[t].filtered = true;
      split_skewness(out[t]);
    }
  }
  return out;
}

}  // namespace tailrisk

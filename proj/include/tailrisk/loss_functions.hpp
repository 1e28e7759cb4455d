#pragma once

// Strictly consistent scoring functions for VaR (quantile loss) and for the
// (VaR, ES) pair (FZ0 and the simplified asymmetric-Laplace score), with their
// derivatives in (v, e).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tailrisk/common.hpp"

namespace tailrisk {

enum class Loss { EM, ALS, FZ0 };

inline const char* to_string(Loss l) noexcept {
  switch (l) {
    case Loss::EM: return "EM";
    case Loss::ALS: return "ALS";
    case Loss::FZ0: return "FZ0";
  }
  return "?";
}

inline Loss parse_loss(const std::string& s) {
  if (s == "EM") return Loss::EM;
  if (s == "ALS") return Loss::ALS;
  if (s == "FZ0") return Loss::FZ0;
  throw ValidationError("unknown loss '" + s + "' (expected EM, ALS or FZ0)");
}

/// A (VaR, ES) forecast pair at level alpha.
struct RiskPair {
  double v = 0.0;
  double e = 0.0;
  double alpha = 0.05;
};

namespace detail {
inline void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
}
inline void require_negative_es(double e) {
  if (!(e < 0.0)) throw ValidationError("ES forecast must be negative for the joint scores");
}
}  // namespace detail

/// Quantile loss {alpha - I(r < v)} (r - v).
inline double em_score(double r, double v, double alpha) {
  detail::require_alpha(alpha);
  const double hit = r < v ? 1.0 : 0.0;
  return (alpha - hit) * (r - v);
}

inline double fz0_score(double r, const RiskPair& p) {
  detail::require_negative_es(p.e);
  const double hit = r <= p.v ? 1.0 : 0.0;
  return -hit * (p.v - r) / (p.alpha * p.e) + p.v / p.e + std::log(-p.e) - 1.0;
}

/// Asymmetric-Laplace score with a(r) = 1 - log(1 - alpha), including the r/e term.
inline double al_full_score(double r, const RiskPair& p) {
  detail::require_negative_es(p.e);
  const double hit = r <= p.v ? 1.0 : 0.0;
  return (hit * r + p.v * (p.alpha - hit)) / (p.alpha * p.e) + std::log(-p.e) - std::log(1.0 - p.alpha);
}

/// Simplified asymmetric-Laplace score (the r/e term dropped).
inline double als_score(double r, const RiskPair& p) {
  detail::require_negative_es(p.e);
  const double hit = r <= p.v ? 1.0 : 0.0;
  return -std::log((1.0 - p.alpha) / -p.e) - (r - p.v) * (p.alpha - hit) / (p.alpha * p.e);
}

/// Score of the given loss; `e` is ignored for EM.
inline double score(Loss loss, double r, double v, double e, double alpha) {
  switch (loss) {
    case Loss::EM: return em_score(r, v, alpha);
    case Loss::ALS: return als_score(r, {v, e, alpha});
    case Loss::FZ0: return fz0_score(r, {v, e, alpha});
  }
  return 0.0;
}

struct ScoreGradient {
  double dv = 0.0;
  double de = 0.0;
};

/// Partial derivatives of the score in (v, e). At the kink r = v the hit
/// indicator is taken as 1 for ALS/FZ0. For EM, de = 0.
inline ScoreGradient score_gradient(Loss loss, double r, double v, double e, double alpha) {
  if (loss == Loss::EM) {
    detail::require_alpha(alpha);
    return {(r < v ? 1.0 : 0.0) - alpha, 0.0};
  }
  detail::require_negative_es(e);
  const double hit = r <= v ? 1.0 : 0.0;
  ScoreGradient g;
  g.dv = (-1.0 / e) * (hit / alpha - 1.0);
  double bracket = hit * (v - r) / alpha - v + e;
  if (loss == Loss::ALS) bracket += r;
  g.de = bracket / (e * e);
  return g;
}

inline ScoreGradient score_gradient(double r, const RiskPair& p, Loss loss) {
  return score_gradient(loss, r, p.v, p.e, p.alpha);
}

/// Mean of per-observation scores after dropping the first `burn_in` entries.
inline double aggregate_score(std::span<const double> scores, std::size_t burn_in = 0) {
  if (burn_in >= scores.size()) throw ValidationError("aggregate_score: burn-in leaves no observations");
  return compensated_mean(scores.subspan(burn_in));
}

/// Aggregate score computed from forecasts and realized returns.
inline double aggregate_score(std::span<const double> returns, std::span<const double> v,
                              std::span<const double> e, Loss loss, double alpha, std::size_t burn_in = 0) {
  if (returns.size() != v.size() || (loss != Loss::EM && e.size() != returns.size())) {
    throw ValidationError("aggregate_score: length mismatch between returns and forecasts");
  }
  if (burn_in >= returns.size()) throw ValidationError("aggregate_score: burn-in leaves no observations");
  CompensatedSum s;
  for (std::size_t t = burn_in; t < returns.size(); ++t) {
    s.add(score(loss, returns[t], v[t], loss == Loss::EM ? 0.0 : e[t], alpha));
  }
  return s.value() / static_cast<double>(returns.size() - burn_in);
}

}  // namespace tailrisk

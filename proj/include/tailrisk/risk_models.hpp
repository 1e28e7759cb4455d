#pragma once

// Additive (CAViaR-type) and multiplicative (GARCH-type) VaR recursions with
// optional ES couplings, their forward-accumulated parameter gradients, and the
// parameter validity checks.

#include <Eigen/Dense>
#include <array>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tailrisk/common.hpp"
#include "tailrisk/loss_functions.hpp"

namespace tailrisk {

enum class VarForm { add_sim, add_skk, add_lev, mlt_sim, mlt_skk, mlt_lev };
enum class EsForm { no, sim, skk };

inline const char* to_string(VarForm f) noexcept {
  switch (f) {
    case VarForm::add_sim: return "add_sim";
    case VarForm::add_skk: return "add_skk";
    case VarForm::add_lev: return "add_lev";
    case VarForm::mlt_sim: return "mlt_sim";
    case VarForm::mlt_skk: return "mlt_skk";
    case VarForm::mlt_lev: return "mlt_lev";
  }
  return "?";
}

inline const char* to_string(EsForm f) noexcept {
  switch (f) {
    case EsForm::no: return "no";
    case EsForm::sim: return "sim";
    case EsForm::skk: return "skk";
  }
  return "?";
}

inline VarForm parse_var_form(const std::string& s) {
  for (auto f : {VarForm::add_sim, VarForm::add_skk, VarForm::add_lev, VarForm::mlt_sim, VarForm::mlt_skk,
                 VarForm::mlt_lev}) {
    if (s == to_string(f)) return f;
  }
  throw ValidationError("unknown VaR form '" + s + "'");
}

inline EsForm parse_es_form(const std::string& s) {
  for (auto f : {EsForm::no, EsForm::sim, EsForm::skk}) {
    if (s == to_string(f)) return f;
  }
  throw ValidationError("unknown ES form '" + s + "'");
}

inline bool is_multiplicative(VarForm f) noexcept {
  return f == VarForm::mlt_sim || f == VarForm::mlt_skk || f == VarForm::mlt_lev;
}
inline bool uses_moments(VarForm f) noexcept {
  return f != VarForm::add_sim && f != VarForm::mlt_sim;
}
inline bool uses_leverage(VarForm f) noexcept { return f == VarForm::add_lev || f == VarForm::mlt_lev; }

struct ModelSpec {
  VarForm var_form = VarForm::mlt_sim;
  EsForm es_form = EsForm::no;
  Loss loss = Loss::EM;
  double alpha = 0.05;

  bool has_es() const noexcept { return es_form != EsForm::no; }

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
    if ((es_form == EsForm::no) != (loss == Loss::EM)) {
      throw ValidationError("model " + name() + ": pure-VaR models use the EM loss and joint models ALS or FZ0");
    }
  }

  /// "var_form:es_form:loss", the form accepted by parse_model.
  std::string name() const {
    if (es_form == EsForm::no) return to_string(var_form);
    return std::string(to_string(var_form)) + ":" + to_string(es_form) + ":" + to_string(loss);
  }
};

/// Parses "mlt_sim", "mlt_sim:sim" or "mlt_sim:sim:FZ0". An ES form without a
/// loss defaults to ALS; no ES form means EM.
inline ModelSpec parse_model(const std::string& text, double alpha = 0.05) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.empty() || parts.size() > 3) throw ValidationError("malformed model string '" + text + "'");
  ModelSpec spec;
  spec.alpha = alpha;
  spec.var_form = parse_var_form(parts[0]);
  spec.es_form = parts.size() > 1 ? parse_es_form(parts[1]) : EsForm::no;
  if (parts.size() > 2) {
    spec.loss = parse_loss(parts[2]);
  } else {
    spec.loss = spec.has_es() ? Loss::ALS : Loss::EM;
  }
  spec.validate();
  return spec;
}

/// Positions of the named coefficients in the flat parameter vector.
/// Order: d0 d1 d2 [d3] [a1 a2 a3] [b0] [b1 b2].
struct ParamLayout {
  int d3 = -1;
  int a1 = -1;
  int b0 = -1;
  int b1 = -1;
  std::size_t size = 3;
  std::vector<std::string> names;

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline ParamLayout layout(const ModelSpec& spec) {
  ParamLayout l;
  l.names = {"d0", "d1", "d2"};
  if (uses_leverage(spec.var_form)) {
    l.d3 = static_cast<int>(l.names.size());
    l.names.push_back("d3");
  }
  if (uses_moments(spec.var_form)) {
    l.a1 = static_cast<int>(l.names.size());
    l.names.insert(l.names.end(), {"a1", "a2", "a3"});
  }
  if (spec.has_es()) {
    l.b0 = static_cast<int>(l.names.size());
    l.names.push_back("b0");
    if (spec.es_form == EsForm::skk) {
      l.b1 = static_cast<int>(l.names.size());
      l.names.insert(l.names.end(), {"b1", "b2"});
    }
  }
  l.size = l.names.size();
  return l;
}

/// Model coefficients; only the slots used by a given spec are meaningful.
struct ParamVector {
  std::array<double, 4> d{0.0, 0.0, 0.0, 0.0};
  std::array<double, 3> a{0.0, 0.0, 0.0};
  std::array<double, 3> b{0.0, 0.0, 0.0};
};

inline Eigen::VectorXd to_vector(const ModelSpec& spec, const ParamVector& p) {
  const auto l = layout(spec);
  Eigen::VectorXd x(static_cast<Eigen::Index>(l.size));
  x[0] = p.d[0];
  x[1] = p.d[1];
  x[2] = p.d[2];
  if (l.d3 >= 0) x[l.d3] = p.d[3];
  if (l.a1 >= 0) {
    for (int i = 0; i < 3; ++i) x[l.a1 + i] = p.a[static_cast<std::size_t>(i)];
  }
  if (l.b0 >= 0) x[l.b0] = p.b[0];
  if (l.b1 >= 0) {
    x[l.b1] = p.b[1];
    x[l.b1 + 1] = p.b[2];
  }
  return x;
}

inline ParamVector from_vector(const ModelSpec& spec, const Eigen::VectorXd& x) {
  const auto l = layout(spec);
  if (static_cast<std::size_t>(x.size()) != l.size) {
    throw ValidationError("parameter vector has " + std::to_string(x.size()) + " entries, model " + spec.name() +
                          " needs " + std::to_string(l.size));
  }
  ParamVector p;
  p.d[0] = x[0];
  p.d[1] = x[1];
  p.d[2] = x[2];
  if (l.d3 >= 0) p.d[3] = x[l.d3];
  if (l.a1 >= 0) {
    for (int i = 0; i < 3; ++i) p.a[static_cast<std::size_t>(i)] = x[l.a1 + i];
  }
  if (l.b0 >= 0) p.b[0] = x[l.b0];
  if (l.b1 >= 0) {
    p.b[1] = x[l.b1];
    p.b[2] = x[l.b1 + 1];
  }
  return p;
}

/// Daily inputs aligned by day: returns[t] and the realized measures observed on day t.
/// Recursions for day t read the measures of day t-1.
struct MarketData {
  std::vector<double> returns;
  std::vector<double> rv;
  std::vector<double> sk;
  std::vector<double> ku;

  std::size_t size() const noexcept { return returns.size(); }

  void validate() const {
    if (returns.empty()) throw ValidationError("market data is empty");
    if (rv.size() != returns.size() || sk.size() != returns.size() || ku.size() != returns.size()) {
      throw ValidationError("market data columns have different lengths");
    }
    for (std::size_t t = 0; t < rv.size(); ++t) {
      if (!(rv[t] >= 0.0) || !std::isfinite(rv[t])) {
        throw ValidationError("realized variance must be finite and nonnegative (day " + std::to_string(t) + ")");
      }
    }
  }

  /// Sub-window [start, start + len).
  MarketData slice(std::size_t start, std::size_t len) const {
    if (start + len > size()) throw ValidationError("market data slice out of range");
    auto cut = [&](const std::vector<double>& v) {
      return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(start),
                                 v.begin() + static_cast<std::ptrdiff_t>(start + len));
    };
    return {cut(returns), cut(rv), cut(sk), cut(ku)};
  }
};

inline double skew_neg(double sk) noexcept { return sk < 0.0 ? -sk : 0.0; }
inline double skew_pos(double sk) noexcept { return sk > 0.0 ? sk : 0.0; }

/// Filtered forecasts over a sample.
struct RiskPath {
  std::vector<double> v;
  std::vector<double> e;   // empty for pure-VaR models
  std::vector<double> h2;  // empty for additive models
  std::vector<int> hits;
  std::vector<double> scores;
};

/// Per-day gradients; row t holds the derivative of v_t (e_t) in every parameter.
struct GradientPath {
  Eigen::MatrixXd dv;
  Eigen::MatrixXd de;  // 0 x p for pure-VaR models
};

struct FeasibilityReport {
  bool ok = true;
  std::vector<std::string> violations;
  std::optional<std::size_t> first_index;
  double magnitude = 0.0;

  void fail(std::string what, double amount, std::optional<std::size_t> index = std::nullopt) {
    ok = false;
    violations.push_back(std::move(what));
    magnitude += std::isfinite(amount) ? std::abs(amount) : 1e6;
    if (index && !first_index) first_index = index;
  }
};

/// Checks the coefficient constraints, including the data-dependent scan that
/// the skewness/kurtosis multiplier stays positive at every sample point.
inline FeasibilityReport validate_params(const ModelSpec& spec, const ParamVector& p, const MarketData& data) {
  FeasibilityReport rep;
  const auto& d = p.d;
  const ParamLayout l = layout(spec);
  const Eigen::VectorXd flat = to_vector(spec, p);
  for (std::size_t i = 0; i < l.size; ++i) {
    if (!std::isfinite(flat[static_cast<Eigen::Index>(i)])) rep.fail(l.names[i] + " is not finite", 1e6);
  }
  if (is_multiplicative(spec.var_form)) {
    if (!(d[0] > 0.0)) rep.fail("d0 must be > 0", d[0]);
    if (!(d[1] >= 0.0)) rep.fail("d1 must be >= 0", d[1]);
    if (!(d[2] >= 0.0)) rep.fail("d2 must be >= 0", d[2]);
    if (!(d[2] < 1.0)) rep.fail("d2 must be < 1", d[2] - 1.0);
    if (uses_leverage(spec.var_form) && !(d[3] >= 0.0)) rep.fail("d3 must be >= 0", d[3]);
    if (uses_moments(spec.var_form)) {
      for (std::size_t t = 0; t < data.size(); ++t) {
        const double m = p.a[0] * skew_neg(data.sk[t]) + p.a[1] * skew_pos(data.sk[t]) + p.a[2] * data.ku[t];
        if (!(m > 0.0)) {
          rep.fail("skewness/kurtosis multiplier must be > 0 (day " + std::to_string(t) + ")", m, t);
          break;
        }
      }
    }
  } else {
    if (!(std::abs(d[2]) < 1.0)) rep.fail("|d2| must be < 1", std::abs(d[2]) - 1.0);
  }
  return rep;
}

namespace detail {

using GradVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 12, 1>;

struct Violation {
  std::size_t index;
  double magnitude;
  std::string what;
};

struct InitialState {
  double v0;
  double h2_0;
  double rbar;
};

inline InitialState initial_state(const ModelSpec& spec, std::span<const double> r) {
  const std::size_t n = r.size();
  const std::size_t n0 = std::max<std::size_t>(1, std::min<std::size_t>(50, n / 10));
  const auto head = r.subspan(0, n0);
  InitialState s{};
  s.v0 = empirical_quantile(head, spec.alpha);
  s.h2_0 = n0 >= 2 ? sample_variance(head) : head[0] * head[0];
  s.h2_0 = std::max(s.h2_0, std::numeric_limits<double>::min());
  s.rbar = compensated_mean(r);
  return s;
}

// Runs the recursion for t = 0 .. T + extra - 1 and calls
// visit(t, v, e, h2, grad_v, grad_e). Steps t >= T are one-step-ahead forecasts
// (they read day T-1 inputs only). Returns the first violation, if any.
template <bool WithGrad, class Visit>
std::optional<Violation> recurse(const ModelSpec& spec, const ParamVector& p, const MarketData& data,
                                 Visit&& visit, std::size_t extra = 0) {
  const std::size_t T = data.size();
  if (T == 0) throw ValidationError("empty market data");
  const ParamLayout l = layout(spec);
  const auto np = static_cast<Eigen::Index>(l.size);
  const InitialState init = initial_state(spec, data.returns);
  const bool mult = is_multiplicative(spec.var_form);
  const bool moments = uses_moments(spec.var_form);
  const bool lev = uses_leverage(spec.var_form);
  const auto& d = p.d;

  GradVec gv, ge, gh2, gm, gg;
  if constexpr (WithGrad) {
    gv.setZero(np);
    ge.setZero(np);
    gh2.setZero(np);
    gm.setZero(np);
    gg.setZero(np);
  }
  double v_prev = init.v0, h2_prev = init.h2_0;

  for (std::size_t t = 0; t < T + extra; ++t) {
    const std::size_t lag = t == 0 ? 0 : t - 1;
    const double skn = skew_neg(data.sk[lag]), skp = skew_pos(data.sk[lag]);
    const double ku = data.ku[lag], sk = data.sk[lag];
    const double lev_ind = (t > 0 && data.returns[lag] <= init.rbar) ? 1.0 : 0.0;
    double v = 0.0, h2 = 0.0;

    if (mult) {
      double m = 1.0;
      if (moments) m = p.a[0] * skn + p.a[1] * skp + p.a[2] * ku;
      if (t == 0) {
        h2 = init.h2_0;
        if constexpr (WithGrad) gh2.setZero();
      } else {
        const double rv = data.rv[lag];
        h2 = d[0] + d[1] * rv + d[2] * h2_prev;
        if (lev) h2 += d[3] * rv * lev_ind;
        if constexpr (WithGrad) {
          gh2 *= d[2];
          gh2[0] += 1.0;
          gh2[1] += rv;
          gh2[2] += h2_prev;
          if (lev) gh2[l.d3] += rv * lev_ind;
        }
      }
      if (!(h2 > 0.0) || !std::isfinite(h2)) return Violation{t, std::isfinite(h2) ? -h2 : 1e6, "h2 <= 0"};
      if (!(m > 0.0) || !std::isfinite(m)) return Violation{t, std::isfinite(m) ? -m : 1e6, "multiplier <= 0"};
      const double s = std::sqrt(h2);
      v = -s * m;
      if constexpr (WithGrad) {
        gv = (-m / (2.0 * s)) * gh2;
        if (moments) {
          gv[l.a1] -= s * skn;
          gv[l.a1 + 1] -= s * skp;
          gv[l.a1 + 2] -= s * ku;
        }
      }
    } else {
      if (t == 0) {
        v = init.v0;
        if constexpr (WithGrad) gv.setZero();
      } else {
        const double srv = std::sqrt(data.rv[lag]);
        v = d[0] + d[1] * srv + d[2] * v_prev;
        if (moments) v += p.a[0] * skn + p.a[1] * skp + p.a[2] * ku;
        if (lev) v += d[3] * srv * lev_ind;
        if constexpr (WithGrad) {
          gv *= d[2];
          gv[0] += 1.0;
          gv[1] += srv;
          gv[2] += v_prev;
          if (moments) {
            gv[l.a1] += skn;
            gv[l.a1 + 1] += skp;
            gv[l.a1 + 2] += ku;
          }
          if (lev) gv[l.d3] += srv * lev_ind;
        }
      }
      if (!(v < 0.0) || !std::isfinite(v)) return Violation{t, std::isfinite(v) ? v : 1e6, "VaR >= 0"};
    }

    double e = 0.0;
    if (spec.has_es()) {
      double g = p.b[0];
      if (spec.es_form == EsForm::skk) g += p.b[1] * sk + p.b[2] * ku;
      const double eg = std::exp(g);
      const double scale = 1.0 + eg;
      e = scale * v;
      if (!(e < v) || !std::isfinite(e)) return Violation{t, 1.0, "ES does not lie below VaR"};
      if constexpr (WithGrad) {
        ge = scale * gv;
        ge[l.b0] += eg * v;
        if (spec.es_form == EsForm::skk) {
          ge[l.b1] += eg * v * sk;
          ge[l.b1 + 1] += eg * v * ku;
        }
      }
    }
    visit(t, v, e, h2, gv, ge);
    v_prev = v;
    h2_prev = h2;
  }
  return std::nullopt;
}

inline void throw_violation(const Violation& v) {
  throw InfeasibleError("infeasible filtered path: " + v.what, v.index);
}

}  // namespace detail

/// Filters (v_t, e_t) over the sample and scores each day with the model's loss.
inline RiskPath filter_path(const ModelSpec& spec, const ParamVector& params, const MarketData& data) {
  spec.validate();
  data.validate();
  const auto rep = validate_params(spec, params, data);
  if (!rep.ok) throw InfeasibleError("infeasible parameters: " + rep.violations.front(), rep.first_index.value_or(0));
  const std::size_t T = data.size();
  RiskPath path;
  path.v.resize(T);
  path.hits.resize(T);
  path.scores.resize(T);
  if (spec.has_es()) path.e.resize(T);
  if (is_multiplicative(spec.var_form)) path.h2.resize(T);
  auto viol = detail::recurse<false>(
      spec, params, data, [&](std::size_t t, double v, double e, double h2, const auto&, const auto&) {
        path.v[t] = v;
        if (spec.has_es()) path.e[t] = e;
        if (!path.h2.empty()) path.h2[t] = h2;
        const double r = data.returns[t];
        path.hits[t] = r <= v ? 1 : 0;
        path.scores[t] = score(spec.loss, r, v, e, spec.alpha);
      });
  if (viol) detail::throw_violation(*viol);
  return path;
}

/// Forward-accumulated derivatives of v_t and e_t in every parameter.
inline GradientPath gradient_path(const ModelSpec& spec, const ParamVector& params, const MarketData& data) {
  spec.validate();
  data.validate();
  const auto rep = validate_params(spec, params, data);
  if (!rep.ok) throw InfeasibleError("infeasible parameters: " + rep.violations.front(), rep.first_index.value_or(0));
  const auto T = static_cast<Eigen::Index>(data.size());
  const auto np = static_cast<Eigen::Index>(layout(spec).size);
  GradientPath g;
  g.dv.setZero(T, np);
  g.de.setZero(spec.has_es() ? T : 0, np);
  auto viol = detail::recurse<true>(
      spec, params, data, [&](std::size_t t, double, double, double, const auto& gv, const auto& ge) {
        const auto row = static_cast<Eigen::Index>(t);
        g.dv.row(row) = gv.transpose();
        if (spec.has_es()) g.de.row(row) = ge.transpose();
      });
  if (viol) detail::throw_violation(*viol);
  return g;
}

/// One-step-ahead (v, e) for the day after the sample, using the sample only.
inline RiskPair forecast_next(const ModelSpec& spec, const ParamVector& params, const MarketData& data) {
  spec.validate();
  data.validate();
  const auto rep = validate_params(spec, params, data);
  if (!rep.ok) throw InfeasibleError("infeasible parameters: " + rep.violations.front(), rep.first_index.value_or(0));
  RiskPair out{0.0, 0.0, spec.alpha};
  const std::size_t T = data.size();
  auto viol = detail::recurse<false>(
      spec, params, data,
      [&](std::size_t t, double v, double e, double, const auto&, const auto&) {
        if (t == T) {
          out.v = v;
          out.e = e;
        }
      },
      1);
  if (viol) detail::throw_violation(*viol);
  return out;
}

/// Cornish-Fisher adjusted quantile. `classical` switches the kurtosis divisor from 2 to 24.
inline double cf_quantile(double alpha, double sk, double ku, bool classical = false) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0,1)");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), alpha);
  const double z2 = z * z, z3 = z2 * z;
  const double kdiv = classical ? 24.0 : 2.0;
  return z + (z2 - 1.0) / 6.0 * sk + (z3 - 3.0 * z) / kdiv * ku - (2.0 * z3 - 5.0 * z) / 36.0 * sk * sk;
}

}  // namespace tailrisk

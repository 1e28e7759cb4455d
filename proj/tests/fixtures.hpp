#pragma once

// Shared generators for tests and the acceptance binary (no test framework here).

#include <random>
#include <vector>

#include "tailrisk/estimator.hpp"
#include "tailrisk/risk_models.hpp"
#include "tailrisk/simulation.hpp"

namespace fixtures {

using namespace tailrisk;

inline const std::vector<std::string>& all_model_strings() {
  static const std::vector<std::string> m = [] {
    std::vector<std::string> out;
    for (const char* v : {"add_sim", "add_skk", "add_lev", "mlt_sim", "mlt_skk", "mlt_lev"}) {
      out.push_back(v);
      out.push_back(std::string(v) + ":sim:FZ0");
      out.push_back(std::string(v) + ":skk:ALS");
    }
    return out;
  }();
  return m;
}

inline MarketData market(std::uint64_t seed, std::size_t T, DgpKind kind = DgpKind::garch_t) {
  DgpSpec d;
  d.kind = kind;
  d.seed = seed;
  return simulate_daily(d, T).market();
}

/// Uniform draw from the default sampling box that yields a feasible path,
/// or nullopt after `tries` attempts.
inline std::optional<ParamVector> feasible_params(const ModelSpec& spec, const MarketData& data, std::mt19937_64& g,
                                                  int tries = 2000) {
  const auto box = default_box(spec, data);
  for (int k = 0; k < tries; ++k) {
    Eigen::VectorXd x(box.lo.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] = std::uniform_real_distribution<double>(box.lo[i], box.hi[i])(g);
    }
    const auto p = from_vector(spec, x);
    if (!validate_params(spec, p, data).ok) continue;
    try {
      filter_path(spec, p, data);
      return p;
    } catch (const InfeasibleError&) {
    }
  }
  return std::nullopt;
}

}  // namespace fixtures

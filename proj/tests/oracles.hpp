#pragma once

// Brute-force rank and median computations shared by the unit and acceptance tests.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "tailrisk/forecast_engine.hpp"

namespace oracles {

// 1 + (#smaller) + (#equal others)/2.
inline double rank_of(const std::vector<double>& xs, std::size_t i) {
  double smaller = 0.0, equal = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    if (xs[j] < xs[i]) smaller += 1.0;
    if (j != i && xs[j] == xs[i]) equal += 1.0;
  }
  return 1.0 + smaller + 0.5 * equal;
}

// k-th smallest (1-based) by counting.
inline double order_stat(const std::vector<double>& xs, std::size_t k) {
  for (double x : xs) {
    std::size_t less = 0, eq = 0;
    for (double y : xs) {
      less += y < x;
      eq += y == x;
    }
    if (less < k && less + eq >= k) return x;
  }
  return 0.0;
}

inline double median(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  return n % 2 ? order_stat(xs, n / 2 + 1) : 0.5 * (order_stat(xs, n / 2) + order_stat(xs, n / 2 + 1));
}

// Random asset x model loss table with deliberate ties (values on a coarse grid).
inline std::vector<std::vector<double>> loss_table(std::mt19937_64& g, std::size_t assets, std::size_t models) {
  std::uniform_int_distribution<int> u(0, 7);
  std::vector<std::vector<double>> t(assets, std::vector<double>(models));
  for (auto& row : t) {
    for (auto& x : row) x = 0.01 + 0.0025 * u(g);
  }
  return t;
}

// One single-day EM record per cell so each record's mean loss is the cell value.
inline std::vector<tailrisk::ForecastRecord> records_from_table(const std::vector<std::vector<double>>& t,
                                                                double alpha = 0.05, std::size_t window = 500) {
  std::vector<tailrisk::ForecastRecord> out;
  for (std::size_t a = 0; a < t.size(); ++a) {
    for (std::size_t m = 0; m < t[a].size(); ++m) {
      tailrisk::ForecastRecord r;
      r.asset = "asset" + std::to_string(a);
      r.model = "model" + std::to_string(m);
      r.alpha = alpha;
      r.window = window;
      r.first_index = window;
      r.v = {-1.0};
      r.r = {0.0};
      r.hit = {0};
      r.em = {t[a][m]};
      r.als = {std::numeric_limits<double>::quiet_NaN()};
      r.fz0 = r.als;
      r.failed = {false};
      r.update = {tailrisk::UpdateKind::complete};
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace oracles

#pragma once

// Rolling-window one-step-ahead forecasting with periodic complete
// re-estimation and warm updates, plus coverage and loss aggregation.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/loss_functions.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk {

struct RollingConfig {
  std::size_t window = 1000;
  std::size_t full_refit_every = 500;
  std::size_t warm_update_every = 50;
  EstimatorOptions estimator{};

  void validate() const {
    if (window == 0) throw ValidationError("rolling window must be positive");
    if (full_refit_every == 0 || warm_update_every == 0) throw ValidationError("refit intervals must be positive");
    if (full_refit_every % warm_update_every != 0) {
      throw ValidationError("warm_update_every must divide full_refit_every");
    }
  }
};

enum class UpdateKind { none, complete, warm, fallback };

struct ForecastRecord {
  std::string asset;
  std::string model;
  double alpha = 0.05;
  std::size_t window = 0;
  std::size_t first_index = 0;  // sample index of the first forecast day
  std::vector<std::string> dates;
  std::vector<double> v, e, r;
  std::vector<int> hit;
  std::vector<double> em, als, fz0;  // NaN where not applicable
  std::vector<bool> failed;
  std::vector<UpdateKind> update;

  std::size_t size() const noexcept { return v.size(); }
  bool has_es() const noexcept { return !e.empty(); }
};

/// Forecast for day t uses only days [t - window, t - 1].
inline ForecastRecord rolling_forecast(const ModelSpec& spec, const MarketData& data, const RollingConfig& cfg,
                                       const std::string& asset = "", const std::vector<std::string>& dates = {}) {
  spec.validate();
  data.validate();
  cfg.validate();
  const std::size_t T = data.size();
  if (T <= cfg.window) {
    throw ValidationError("rolling forecast needs more than " + std::to_string(cfg.window) + " observations, got " +
                          std::to_string(T));
  }
  if (!dates.empty() && dates.size() != T) throw ValidationError("date labels do not match the sample length");
  const std::size_t H = T - cfg.window;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ForecastRecord rec;
  rec.asset = asset;
  rec.model = spec.name();
  rec.alpha = spec.alpha;
  rec.window = cfg.window;
  rec.first_index = cfg.window;
  rec.v.assign(H, nan);
  if (spec.has_es()) rec.e.assign(H, nan);
  rec.r.resize(H);
  rec.hit.assign(H, 0);
  rec.em.assign(H, nan);
  rec.als.assign(H, nan);
  rec.fz0.assign(H, nan);
  rec.failed.assign(H, false);
  rec.update.assign(H, UpdateKind::none);
  if (!dates.empty()) rec.dates.assign(dates.begin() + static_cast<std::ptrdiff_t>(cfg.window), dates.end());

  std::optional<FitResult> current;
  bool stale = false;  // last scheduled estimation failed; carrying older parameters
  for (std::size_t k = 0; k < H; ++k) {
    const std::size_t t = cfg.window + k;
    const MarketData win = data.slice(k, cfg.window);
    EstimatorOptions eo = cfg.estimator;
    eo.seed = stream_seed(cfg.estimator.seed, k);
    try {
      // Without a usable estimate, scheduled updates retry the complete estimation.
      if (k % cfg.full_refit_every == 0 || (!current && k % cfg.warm_update_every == 0)) {
        current = complete_estimation(spec, win, eo);
        rec.update[k] = UpdateKind::complete;
        stale = false;
      } else if (k % cfg.warm_update_every == 0) {
        current = warm_update(spec, *current, win, eo);
        rec.update[k] = current->fallback ? UpdateKind::fallback : UpdateKind::warm;
        stale = false;
      }
    } catch (const Error&) {
      stale = true;
    }
    rec.r[k] = data.returns[t];
    if (!current) {
      rec.failed[k] = true;
      continue;
    }
    try {
      const RiskPair f = forecast_next(spec, current->params, win);
      rec.v[k] = f.v;
      rec.hit[k] = data.returns[t] <= f.v ? 1 : 0;
      rec.em[k] = em_score(data.returns[t], f.v, spec.alpha);
      if (spec.has_es()) {
        rec.e[k] = f.e;
        rec.als[k] = als_score(data.returns[t], f);
        rec.fz0[k] = fz0_score(data.returns[t], f);
      }
      rec.failed[k] = stale;
    } catch (const Error&) {
      rec.failed[k] = true;
    }
  }
  return rec;
}

/// Mean hit indicator over days with a valid forecast.
inline double empirical_coverage(const ForecastRecord& rec) {
  std::size_t n = 0, hits = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec.failed[k]) continue;
    ++n;
    hits += static_cast<std::size_t>(rec.hit[k]);
  }
  if (n == 0) throw ValidationError("empirical coverage of an empty record");
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline double empirical_coverage(std::span<const int> hits) {
  if (hits.empty()) throw ValidationError("empirical coverage of an empty record");
  std::size_t s = 0;
  for (int h : hits) s += static_cast<std::size_t>(h != 0);
  return static_cast<double>(s) / static_cast<double>(hits.size());
}

/// Mean of the chosen per-day score over valid days; NaN if none is usable.
inline double record_mean_loss(const ForecastRecord& rec, Loss loss) {
  const auto& col = loss == Loss::EM ? rec.em : loss == Loss::ALS ? rec.als : rec.fz0;
  CompensatedSum s;
  std::size_t n = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec.failed[k] || !std::isfinite(col[k])) continue;
    s.add(col[k]);
    ++n;
  }
  return n ? s.value() / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ValidationError("median of an empty set");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// Ranks (1 = smallest) with ties sharing their mean rank.
inline std::vector<double> tied_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

/// Average over assets (rows) of the per-asset ranks across models (columns).
inline std::vector<double> average_ranks(const std::vector<std::vector<double>>& table) {
  if (table.empty()) throw ValidationError("average_ranks: empty table");
  const std::size_t m = table.front().size();
  std::vector<double> acc(m, 0.0);
  for (const auto& row : table) {
    if (row.size() != m) throw ValidationError("average_ranks: ragged table");
    const auto rk = tied_ranks(row);
    for (std::size_t j = 0; j < m; ++j) acc[j] += rk[j];
  }
  for (auto& a : acc) a /= static_cast<double>(table.size());
  return acc;
}

struct LossTableRow {
  std::string model;
  double alpha = 0.0;
  std::size_t window = 0;
  double median_loss = 0.0;  // median across assets of the per-asset mean loss
  double display = 0.0;      // median_loss, x1000 for the quantile loss
  double mean_rank = 0.0;
  std::size_t n_assets = 0;
  std::size_t n_excluded = 0;
};

struct LossSummary {
  Loss loss = Loss::EM;
  std::vector<LossTableRow> rows;
};

/// Median-loss and average-rank tables per (model, alpha, window). Records of
/// the same asset, alpha and window must cover identical forecast days.
inline LossSummary loss_summary(const std::vector<ForecastRecord>& records, Loss loss) {
  using Group = std::tuple<double, std::size_t>;  // alpha, window
  std::map<Group, std::vector<std::string>> models;
  std::map<Group, std::vector<std::string>> assets;
  std::map<std::tuple<double, std::size_t, std::string, std::string>, const ForecastRecord*> by_key;
  for (const auto& rec : records) {
    if (loss != Loss::EM && !rec.has_es()) continue;
    const Group g{rec.alpha, rec.window};
    auto& ms = models[g];
    if (std::find(ms.begin(), ms.end(), rec.model) == ms.end()) ms.push_back(rec.model);
    auto& as = assets[g];
    if (std::find(as.begin(), as.end(), rec.asset) == as.end()) as.push_back(rec.asset);
    const auto key = std::make_tuple(rec.alpha, rec.window, rec.asset, rec.model);
    if (by_key.count(key)) throw ValidationError("duplicate record for asset " + rec.asset + ", model " + rec.model);
    by_key[key] = &rec;
  }
  LossSummary out;
  out.loss = loss;
  for (auto& [g, ms] : models) {
    std::sort(ms.begin(), ms.end());
    auto as = assets[g];
    std::sort(as.begin(), as.end());
    const auto [alpha, window] = g;
    std::vector<std::vector<double>> per_model(ms.size());
    std::vector<std::size_t> excluded(ms.size(), 0);
    std::vector<std::vector<double>> rank_rows;
    for (const auto& a : as) {
      const ForecastRecord* ref = nullptr;
      std::vector<double> row(ms.size(), std::numeric_limits<double>::quiet_NaN());
      bool complete = true;
      for (std::size_t j = 0; j < ms.size(); ++j) {
        const auto it = by_key.find(std::make_tuple(alpha, window, a, ms[j]));
        if (it == by_key.end()) {
          complete = false;
          ++excluded[j];
          continue;
        }
        const ForecastRecord* rec = it->second;
        if (ref && (rec->first_index != ref->first_index || rec->size() != ref->size() || rec->dates != ref->dates)) {
          throw ValidationError("records for asset " + a + " cover different forecast days across models");
        }
        ref = rec;
        row[j] = record_mean_loss(*rec, loss);
        if (std::isfinite(row[j])) {
          per_model[j].push_back(row[j]);
        } else {
          complete = false;
          ++excluded[j];
        }
      }
      if (complete) rank_rows.push_back(row);
    }
    const auto ranks = rank_rows.empty() ? std::vector<double>(ms.size(), std::numeric_limits<double>::quiet_NaN())
                                         : average_ranks(rank_rows);
    for (std::size_t j = 0; j < ms.size(); ++j) {
      LossTableRow r;
      r.model = ms[j];
      r.alpha = alpha;
      r.window = window;
      r.n_assets = per_model[j].size();
      r.n_excluded = excluded[j];
      r.median_loss = per_model[j].empty() ? std::numeric_limits<double>::quiet_NaN() : median(per_model[j]);
      r.display = loss == Loss::EM ? 1000.0 * r.median_loss : r.median_loss;
      r.mean_rank = ranks[j];
      out.rows.push_back(r);
    }
  }
  return out;
}

}  // namespace tailrisk

#pragma once

// End-to-end run: (optional simulation) -> measures -> fits -> forecasts ->
// backtests -> summary, with a hashed manifest and stage-level caching.
//
// Each stage reads its inputs back from the files the previous stage wrote,
// so a cached stage and a recomputed one feed identical data downstream.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tailrisk/backtests.hpp"
#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/forecast_engine.hpp"
#include "tailrisk/inference.hpp"
#include "tailrisk/io.hpp"
#include "tailrisk/realized_measures.hpp"
#include "tailrisk/risk_models.hpp"
#include "tailrisk/simulation.hpp"

namespace tailrisk {

namespace fs = std::filesystem;
using nlohmann::json;

inline VarianceKind parse_variance_kind(const std::string& s) {
  for (auto k : {VarianceKind::RV, VarianceKind::BPV, VarianceKind::SV_POS, VarianceKind::SV_NEG, VarianceKind::MED}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown variance estimator '" + s + "'");
}

struct RunConfig {
  std::vector<std::string> inputs;
  std::vector<std::string> models{"mlt_sim"};
  std::vector<double> alphas{0.05};
  std::vector<std::size_t> windows{500};
  std::size_t refit_every = 500;
  std::size_t update_every = 50;
  std::uint64_t seed = 1;
  std::string out = "tailrisk_out";
  std::size_t starts = 50000;
  std::size_t keep = 10;
  std::size_t max_alternations = 20;
  std::size_t threads = 0;
  std::string variance = "MED";
  int tau = 5;
  std::size_t min_days = io::kMinDays;
  bool cache = true;
  bool in_sample = true;
  std::size_t dq_lags = 4;
  std::size_t pzc_lags = 20;
  std::size_t esr_perturb = 1000;
  double level = 0.05;
  // Simulated inputs (diffusion days written as intraday CSVs) when > 0.
  std::size_t simulate_assets = 0;
  std::size_t simulate_days = 800;
  std::size_t simulate_slots = 78;

  /// Applies one key=value setting; unknown keys and bad values are errors.
  void set(const std::string& key, const std::string& raw) {
    const std::string value = io::trim(raw);
    auto list = [&] {
      std::vector<std::string> out;
      for (const auto& item : io::split(value)) {
        const auto t = io::trim(item);
        if (!t.empty()) out.push_back(t);
      }
      return out;
    };
    auto to_size = [&](const std::string& v) {
      const long long n = io::parse_int(v, "config", 0);
      if (n < 0) throw ValidationError("config: " + key + " must be non-negative");
      return static_cast<std::size_t>(n);
    };
    auto to_bool = [&](const std::string& v) {
      if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
      if (v == "0" || v == "false" || v == "no" || v == "off") return false;
      throw ValidationError("config: " + key + " expects a boolean, got '" + v + "'");
    };
    if (key == "inputs") {
      inputs = list();
    } else if (key == "models") {
      models = list();
    } else if (key == "alphas") {
      alphas.clear();
      for (const auto& a : list()) alphas.push_back(io::parse_double(a, "config", 0));
    } else if (key == "windows") {
      windows.clear();
      for (const auto& w : list()) windows.push_back(to_size(w));
    } else if (key == "refit_every") {
      refit_every = to_size(value);
    } else if (key == "update_every") {
      update_every = to_size(value);
    } else if (key == "seed") {
      seed = static_cast<std::uint64_t>(to_size(value));
    } else if (key == "out") {
      out = value;
    } else if (key == "starts") {
      starts = to_size(value);
    } else if (key == "keep") {
      keep = to_size(value);
    } else if (key == "max_alternations") {
      max_alternations = to_size(value);
    } else if (key == "threads") {
      threads = to_size(value);
    } else if (key == "variance") {
      variance = value;
    } else if (key == "tau") {
      tau = static_cast<int>(to_size(value));
    } else if (key == "min_days") {
      min_days = to_size(value);
    } else if (key == "cache") {
      cache = to_bool(value);
    } else if (key == "in_sample") {
      in_sample = to_bool(value);
    } else if (key == "dq_lags") {
      dq_lags = to_size(value);
    } else if (key == "pzc_lags") {
      pzc_lags = to_size(value);
    } else if (key == "esr_perturb") {
      esr_perturb = to_size(value);
    } else if (key == "level") {
      level = io::parse_double(value, "config", 0);
    } else if (key == "simulate_assets") {
      simulate_assets = to_size(value);
    } else if (key == "simulate_days") {
      simulate_days = to_size(value);
    } else if (key == "simulate_slots") {
      simulate_slots = to_size(value);
    } else {
      throw ValidationError("config: unknown key '" + key + "'");
    }
  }

  void validate() const {
    if (models.empty()) throw ValidationError("config: the model list is empty");
    if (alphas.empty()) throw ValidationError("config: the alpha list is empty");
    if (windows.empty()) throw ValidationError("config: the window list is empty");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) throw ValidationError("config: alpha must lie in (0, 1)");
    }
    for (const auto& m : models) {
      for (double a : alphas) parse_model(m, a).validate();
    }
    if (inputs.empty() && simulate_assets == 0) throw ValidationError("config: no inputs and no simulated assets");
    if (starts == 0 || keep == 0 || keep > starts) throw ValidationError("config: need 0 < keep <= starts");
    if (!(level >= 0.0 && level < 1.0)) throw ValidationError("config: level must lie in [0, 1)");
    if (tau < 1) throw ValidationError("config: tau must be >= 1");
    parse_variance_kind(variance);
    RollingConfig rc;
    rc.full_refit_every = refit_every;
    rc.warm_update_every = update_every;
    for (auto w : windows) {
      rc.window = w;
      rc.validate();
    }
    if (simulate_assets > 0 && simulate_slots < 3) throw ValidationError("config: simulate_slots must be >= 3");
  }

  /// Fully resolved settings; `threads` and `out` never change results and are
  /// left out of cache keys.
  json to_json() const {
    return json{{"inputs", inputs},
                {"models", models},
                {"alphas", alphas},
                {"windows", windows},
                {"refit_every", refit_every},
                {"update_every", update_every},
                {"seed", seed},
                {"out", out},
                {"starts", starts},
                {"keep", keep},
                {"max_alternations", max_alternations},
                {"threads", threads},
                {"variance", variance},
                {"tau", tau},
                {"min_days", min_days},
                {"cache", cache},
                {"in_sample", in_sample},
                {"dq_lags", dq_lags},
                {"pzc_lags", pzc_lags},
                {"esr_perturb", esr_perturb},
                {"level", level},
                {"simulate_assets", simulate_assets},
                {"simulate_days", simulate_days},
                {"simulate_slots", simulate_slots}};
  }

  json result_relevant_json() const {
    json j = to_json();
    j.erase("threads");
    j.erase("out");
    j.erase("cache");
    return j;
  }

  EstimatorOptions estimator_options() const {
    EstimatorOptions eo;
    eo.n_starts = starts;
    eo.m_keep = keep;
    eo.seed = seed;
    eo.max_alternations = max_alternations;
    eo.threads = 1;  // parallelism lives at the task level
    return eo;
  }
};

/// Parses `key = value` lines; `#` starts a comment.
inline void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(io::where(source, ln) + "expected key = value");
    try {
      cfg.set(io::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError(io::where(source, ln) + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path, const std::map<std::string, std::string>& overrides = {}) {
  RunConfig cfg;
  if (!path.empty()) apply_config_text(cfg, io::read_file(path), path);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

// ---------------------------------------------------------------- manifest

enum class StageStatus { completed, cached, failed, skipped };

inline const char* to_string(StageStatus s) noexcept {
  switch (s) {
    case StageStatus::completed: return "completed";
    case StageStatus::cached: return "cached";
    case StageStatus::failed: return "failed";
    case StageStatus::skipped: return "skipped";
  }
  return "?";
}

struct StageRecord {
  std::string name;
  StageStatus status = StageStatus::skipped;
  std::string key;
  std::map<std::string, std::string> files;  // relative path -> sha256
  std::string error;
  std::vector<std::string> notes;
};

struct PipelineResult {
  fs::path out;
  std::vector<StageRecord> stages;
  std::optional<std::string> failure_point;
  std::vector<io::Exclusion> excluded;

  /// Every artifact across stages (the manifest itself excluded).
  std::map<std::string, std::string> artifacts() const {
    std::map<std::string, std::string> all;
    for (const auto& s : stages) all.insert(s.files.begin(), s.files.end());
    return all;
  }
  std::size_t recomputed() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.status == StageStatus::completed ? 1 : 0;
    return n;
  }
  bool ok() const { return !failure_point.has_value(); }
};

namespace detail {

inline std::string safe_name(std::string s) {
  for (char& c : s) {
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '-';
  }
  return s;
}

inline std::string record_stem(const std::string& asset, const std::string& model, double alpha, std::size_t window = 0) {
  std::string s = safe_name(asset) + "__" + safe_name(model) + "__a" + io::fmt(alpha);
  if (window) s += "__w" + std::to_string(window);
  return s;
}

/// Writes `content` under out/rel and records its hash.
inline void emit(StageRecord& st, const fs::path& out, const std::string& rel, const std::string& content) {
  io::write_file(out / rel, content);
  st.files[rel] = io::sha256_hex(content);
}

inline json manifest_json(const RunConfig& cfg, const PipelineResult& res) {
  json stages = json::array();
  for (const auto& s : res.stages) {
    stages.push_back(json{{"name", s.name},
                          {"status", to_string(s.status)},
                          {"key", s.key},
                          {"files", s.files},
                          {"error", s.error},
                          {"notes", s.notes}});
  }
  json excluded = json::array();
  for (const auto& e : res.excluded) excluded.push_back(json{{"asset", e.asset}, {"reason", e.reason}});
  return json{{"version", kVersion},
              {"seed", cfg.seed},
              {"config", cfg.to_json()},
              {"stages", stages},
              {"artifacts", res.artifacts()},
              {"excluded", excluded},
              {"failure_point", res.failure_point ? json(*res.failure_point) : json(nullptr)}};
}

/// A previous stage is reusable when its key matches and every file it listed
/// still exists with the recorded hash.
inline std::optional<StageRecord> reusable(const json& old, const std::string& name, const std::string& key,
                                           const fs::path& out) {
  if (!old.is_object() || !old.contains("stages")) return std::nullopt;
  for (const auto& s : old["stages"]) {
    if (s.value("name", "") != name) continue;
    const std::string status = s.value("status", "");
    if ((status != "completed" && status != "cached") || s.value("key", "") != key) return std::nullopt;
    StageRecord rec;
    rec.name = name;
    rec.key = key;
    rec.status = StageStatus::cached;
    for (const auto& [rel, h] : s["files"].items()) {
      const fs::path p = out / rel;
      if (!fs::exists(p) || io::sha256_file(p) != h.get<std::string>()) return std::nullopt;
      rec.files[rel] = h.get<std::string>();
    }
    if (s.contains("notes")) rec.notes = s["notes"].get<std::vector<std::string>>();
    return rec;
  }
  return std::nullopt;
}

inline std::string stage_key(const std::string& name, const json& material, const std::string& upstream) {
  return io::sha256_hex(name + "\n" + material.dump() + "\n" + upstream);
}

/// Days of a record usable for backtesting (failed days dropped).
struct ValidSlice {
  std::vector<double> v, e, r;
};

inline ValidSlice valid_days(const ForecastRecord& rec) {
  ValidSlice s;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec.failed[k] || !std::isfinite(rec.v[k])) continue;
    if (rec.has_es() && !std::isfinite(rec.e[k])) continue;
    s.v.push_back(rec.v[k]);
    if (rec.has_es()) s.e.push_back(rec.e[k]);
    s.r.push_back(rec.r[k]);
  }
  return s;
}

inline BacktestReport guarded(const std::string& name, const std::function<BacktestReport()>& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return invalid_report(name, e.what());
  }
}

}  // namespace detail

/// Runs every stage; on a stage failure the manifest records the failure point,
/// earlier artifacts stay on disk and the error is rethrown.
inline PipelineResult run_pipeline(RunConfig cfg) {
  cfg.validate();
  const std::size_t threads = cfg.threads ? cfg.threads : thread_count();
  PipelineResult res;
  res.out = cfg.out;
  const fs::path out = cfg.out;
  fs::create_directories(out);
  json old_manifest;
  if (cfg.cache && fs::exists(out / "manifest.json")) {
    try {
      old_manifest = json::parse(io::read_file(out / "manifest.json"));
    } catch (const json::exception&) {
      old_manifest = json();
    }
  }
  const json material = cfg.result_relevant_json();
  std::string upstream;

  auto write_manifest = [&] { io::write_file(out / "manifest.json", detail::manifest_json(cfg, res).dump(2) + "\n"); };

  // Runs `body` unless the cache can serve the stage; `extra` joins the key.
  auto stage = [&](const std::string& name, const std::string& extra, const std::function<void(StageRecord&)>& body) {
    const std::string key = detail::stage_key(name, material, upstream + "\n" + extra);
    if (cfg.cache) {
      if (auto hit = detail::reusable(old_manifest, name, key, out)) {
        res.stages.push_back(*hit);
        upstream = key;
        return;
      }
    }
    StageRecord st;
    st.name = name;
    st.key = key;
    try {
      body(st);
      st.status = StageStatus::completed;
      res.stages.push_back(st);
      upstream = key;
    } catch (const std::exception& e) {
      st.status = StageStatus::failed;
      st.error = e.what();
      res.stages.push_back(st);
      res.failure_point = name;
      write_manifest();
      throw;
    }
  };

  // ---- simulate
  std::vector<std::string> inputs = cfg.inputs;
  if (cfg.simulate_assets > 0) {
    std::vector<std::string> rels;
    for (std::size_t a = 0; a < cfg.simulate_assets; ++a) {
      char name[32];
      std::snprintf(name, sizeof name, "sim%03zu", a);
      rels.push_back(std::string("inputs/") + name + ".csv");
    }
    stage("simulate", "", [&](StageRecord& st) {
      std::vector<std::string> texts(rels.size());
      parallel_for(
          rels.size(),
          [&](std::size_t a) {
            DgpSpec d;
            d.kind = DgpKind::diffusion;
            d.seed = stream_seed(cfg.seed, 1000 + a);
            texts[a] = io::intraday_csv(simulate_intraday(d, cfg.simulate_days, cfg.simulate_slots).days);
          },
          threads);
      for (std::size_t a = 0; a < rels.size(); ++a) detail::emit(st, out, rels[a], texts[a]);
    });
    for (const auto& r : rels) inputs.push_back((out / r).string());
  }

  // ---- measures
  std::string input_hashes;
  for (const auto& p : inputs) input_hashes += p + "=" + io::sha256_file(p) + "\n";
  std::vector<std::string> assets;
  stage("measures", input_hashes, [&](StageRecord& st) {
    auto ing = io::ingest(inputs, cfg.min_days);
    res.excluded = ing.excluded;
    for (const auto& e : ing.excluded) st.notes.push_back("excluded " + e.asset + ": " + e.reason);
    MeasureOptions mo;
    mo.variance = parse_variance_kind(cfg.variance);
    mo.tau = cfg.tau;
    std::vector<std::string> meas(ing.assets.size()), mkt(ing.assets.size());
    parallel_for(
        ing.assets.size(),
        [&](std::size_t i) {
          const auto& a = ing.assets[i];
          const auto series = filter_and_interpolate(compute_realized_series(a.days, mo));
          meas[i] = io::measures_csv(series);
          mkt[i] = io::market_csv(io::align_market(a, series));
        },
        threads);
    for (std::size_t i = 0; i < ing.assets.size(); ++i) {
      const auto n = detail::safe_name(ing.assets[i].name);
      detail::emit(st, out, "measures/" + n + ".csv", meas[i]);
      detail::emit(st, out, "market/" + n + ".csv", mkt[i]);
    }
  });
  for (const auto& s : res.stages) {
    if (s.name != "measures") continue;
    for (const auto& [rel, h] : s.files) {
      if (rel.rfind("market/", 0) == 0) assets.push_back(fs::path(rel).stem().string());
    }
    for (const auto& n : s.notes) {
      if (n.rfind("excluded ", 0) == 0 && res.excluded.empty()) {
        const auto colon = n.find(": ");
        res.excluded.push_back({n.substr(9, colon - 9), n.substr(colon + 2)});
      }
    }
  }
  if (assets.empty()) {
    res.failure_point = "measures";
    write_manifest();
    throw ValidationError("no asset passed the minimum-length screen");
  }
  std::map<std::string, io::DatedMarket> markets;
  for (const auto& a : assets) {
    const auto p = out / ("market/" + a + ".csv");
    markets[a] = io::parse_market_csv(io::read_file(p), p.string());
  }

  struct Task {
    std::string asset, model;
    double alpha;
    std::size_t window;
  };

  // ---- fits (full-sample estimation with in-sample diagnostics)
  if (cfg.in_sample) {
    stage("fits", "", [&](StageRecord& st) {
      std::vector<Task> tasks;
      for (const auto& a : assets)
        for (const auto& m : cfg.models)
          for (double al : cfg.alphas) tasks.push_back({a, m, al, 0});
      std::vector<std::string> docs(tasks.size());
      std::vector<std::vector<io::BacktestRow>> rows(tasks.size());
      std::vector<std::string> cov_lines(tasks.size());
      parallel_for(
          tasks.size(),
          [&](std::size_t i) {
            const auto& tk = tasks[i];
            const auto spec = parse_model(tk.model, tk.alpha);
            const auto& data = markets.at(tk.asset).data;
            EstimatorOptions eo = cfg.estimator_options();
            eo.seed = stream_seed(cfg.seed, 7000 + i);
            json doc;
            double coverage = std::numeric_limits<double>::quiet_NaN();
            try {
              const FitResult fit = complete_estimation(spec, data, eo);
              doc = io::fit_json(fit, json{{"asset", tk.asset}, {"first", 0}, {"length", data.size()}});
              try {
                const auto cov = spec.has_es() ? cov_joint(fit, data) : cov_pure_var(fit, data);
                doc["covariance"] = io::covariance_json(cov, spec);
              } catch (const Error& e) {
                doc["covariance"] = json{{"error", e.what()}};
              }
              const auto path = filter_path(spec, fit.params, data);
              std::vector<int> h(path.hits.begin() + static_cast<std::ptrdiff_t>(fit.burn_in), path.hits.end());
              coverage = empirical_coverage(h);
              doc["in_sample_coverage"] = coverage;
              if (!spec.has_es()) {
                for (auto var : {DqVariant::CC, DqVariant::ID}) {
                  io::BacktestRow r{tk.asset, spec.name(), "in", tk.alpha, 0, {}};
                  r.report = detail::guarded(std::string(to_string(var)) + "-DQ_IS",
                                             [&] { return dq_in_sample(fit, data, var, cfg.dq_lags); });
                  rows[i].push_back(r);
                }
              }
            } catch (const Error& e) {
              doc = json{{"spec", spec.name()}, {"alpha", tk.alpha}, {"error", e.what()}};
            }
            docs[i] = doc.dump(2) + "\n";
            cov_lines[i] = tk.asset + "," + spec.name() + "," + io::fmt(tk.alpha) + ",0,in," + io::fmt(coverage) +
                           "," + (std::isfinite(coverage) ? "0" : "1") + "," + std::to_string(data.size()) + "\n";
          },
          threads);
      std::vector<io::BacktestRow> all;
      std::string cov_csv = "asset,model,alpha,window,sample,coverage,failure_fraction,n_days\n";
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        detail::emit(st, out, "fits/" + detail::record_stem(tasks[i].asset, tasks[i].model, tasks[i].alpha) + ".json",
                     docs[i]);
        all.insert(all.end(), rows[i].begin(), rows[i].end());
        cov_csv += cov_lines[i];
      }
      detail::emit(st, out, "fits/in_sample_backtests.csv", io::backtests_csv(all));
      detail::emit(st, out, "plots/coverage_in_sample.csv", cov_csv);
    });
  }

  // ---- forecasts
  std::vector<Task> ftasks;
  for (const auto& a : assets)
    for (const auto& m : cfg.models)
      for (double al : cfg.alphas)
        for (auto w : cfg.windows) ftasks.push_back({a, m, al, w});
  auto forecast_rel = [&](const Task& t) {
    return "forecasts/" + detail::record_stem(t.asset, t.model, t.alpha, t.window) + ".csv";
  };
  stage("forecasts", "", [&](StageRecord& st) {
    std::vector<std::string> texts(ftasks.size());
    std::vector<std::string> errors(ftasks.size());
    parallel_for(
        ftasks.size(),
        [&](std::size_t i) {
          const auto& tk = ftasks[i];
          const auto spec = parse_model(tk.model, tk.alpha);
          const auto& m = markets.at(tk.asset);
          RollingConfig rc;
          rc.window = tk.window;
          rc.full_refit_every = cfg.refit_every;
          rc.warm_update_every = cfg.update_every;
          rc.estimator = cfg.estimator_options();
          rc.estimator.seed = stream_seed(cfg.seed, 9000 + i);
          try {
            texts[i] = io::forecast_csv(rolling_forecast(spec, m.data, rc, tk.asset, m.dates));
          } catch (const ValidationError& e) {
            errors[i] = e.what();
          }
        },
        threads);
    for (std::size_t i = 0; i < ftasks.size(); ++i) {
      if (!errors[i].empty()) {
        st.notes.push_back("skipped " + forecast_rel(ftasks[i]) + ": " + errors[i]);
        continue;
      }
      detail::emit(st, out, forecast_rel(ftasks[i]), texts[i]);
    }
  });
  std::vector<ForecastRecord> records;
  for (const auto& t : ftasks) {
    const auto p = out / forecast_rel(t);
    if (!fs::exists(p)) continue;
    records.push_back(io::parse_forecast_csv(io::read_file(p), p.string()));
  }

  // ---- backtests
  stage("backtests", "", [&](StageRecord& st) {
    std::vector<std::vector<io::BacktestRow>> rows(records.size());
    parallel_for(
        records.size(),
        [&](std::size_t i) {
          const auto& rec = records[i];
          const auto s = detail::valid_days(rec);
          auto add = [&](const std::string& name, const std::function<BacktestReport()>& fn) {
            io::BacktestRow r{rec.asset, rec.model, "out", rec.alpha, rec.window, {}};
            r.report = detail::guarded(name, fn);
            rows[i].push_back(r);
          };
          for (auto var : {DqVariant::CC, DqVariant::ID}) {
            add(std::string(to_string(var)) + "-DQ_OOS", [&] { return dq_out_of_sample(s.v, s.r, rec.alpha, var, cfg.dq_lags); });
          }
          add("PZC_VaR", [&] { return pzc_test(s.v, {}, s.r, rec.alpha, PzcTarget::VaR, cfg.pzc_lags); });
          if (rec.has_es()) {
            add("PZC_ES", [&] { return pzc_test(s.v, s.e, s.r, rec.alpha, PzcTarget::ES, cfg.pzc_lags); });
            EsrOptions eo;
            eo.n_perturb = cfg.esr_perturb;
            eo.seed = stream_seed(cfg.seed, 11000 + i);
            for (auto var : {EsrVariant::auxiliary, EsrVariant::strict, EsrVariant::strict_intercept}) {
              add(std::string("ESR_") + to_string(var), [&] { return esr_test(s.v, s.e, s.r, rec.alpha, var, eo); });
            }
          }
        },
        threads);
    std::vector<io::BacktestRow> all;
    for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
    detail::emit(st, out, "backtests/backtests.csv", io::backtests_csv(all));
    detail::emit(st, out, "backtests/backtests.json", io::backtests_json(all).dump(2) + "\n");
  });

  // ---- summary
  stage("summary", "", [&](StageRecord& st) {
    auto rows = io::parse_backtests_csv(io::read_file(out / "backtests/backtests.csv"), "backtests.csv");
    if (fs::exists(out / "fits/in_sample_backtests.csv")) {
      auto in = io::parse_backtests_csv(io::read_file(out / "fits/in_sample_backtests.csv"), "in_sample_backtests.csv");
      rows.insert(rows.begin(), in.begin(), in.end());
    }
    detail::emit(st, out, "summary/non_rejection.csv", io::nonrejection_csv(rows, cfg.level));
    json tables = json::object();
    for (auto loss : {Loss::EM, Loss::ALS, Loss::FZ0}) {
      const auto s = loss_summary(records, loss);
      const std::string n = to_string(loss);
      detail::emit(st, out, "summary/loss_" + n + ".csv", io::loss_table_csv(s));
      tables[n] = io::loss_table_json(s);
    }
    detail::emit(st, out, "summary/loss_tables.json", tables.dump(2) + "\n");
    detail::emit(st, out, "plots/coverage_out_of_sample.csv", io::coverage_plot_csv(records));
  });

  write_manifest();
  return res;
}

}  // namespace tailrisk

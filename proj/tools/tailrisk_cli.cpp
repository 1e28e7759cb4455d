// tailrisk command-line front end.
//
// Every subcommand resolves a RunConfig from --config (key = value file) and
// then applies explicitly given flags on top, so the command line wins.
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tailrisk/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tailrisk;
using nlohmann::json;

namespace {

struct Overrides {
  std::map<std::string, std::string> kv;
  std::vector<std::pair<CLI::Option*, std::string>> bound;  // option, config key

  void bind(CLI::Option* opt, const std::string& key) { bound.emplace_back(opt, key); }
  void collect() {
    for (const auto& [opt, key] : bound) {
      if (opt->count() == 0) continue;
      std::string joined;
      for (const auto& r : opt->results()) joined += (joined.empty() ? "" : ",") + r;
      kv[key] = joined;
    }
  }
};

std::vector<std::string> glob_dir(const fs::path& dir, const std::string& ext) {
  std::vector<std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Applies --loss to every model string: appended if absent, checked if present.
std::vector<std::string> apply_loss(const std::vector<std::string>& models, const std::string& loss) {
  if (loss.empty()) return models;
  std::vector<std::string> out;
  for (const auto& m : models) {
    const auto parts = io::split(m, ':');
    if (parts.size() == 1) {
      if (loss != "EM") throw ValidationError("model " + m + " has no ES component; loss " + loss + " needs one");
      out.push_back(m);
    } else if (parts.size() == 2) {
      out.push_back(m + ":" + loss);
    } else {
      if (parts[2] != loss) throw ValidationError("model " + m + " conflicts with --loss " + loss);
      out.push_back(m);
    }
  }
  return out;
}

void write_summary(const fs::path& out, const std::vector<ForecastRecord>& records) {
  json tables = json::object();
  for (auto loss : {Loss::EM, Loss::ALS, Loss::FZ0}) {
    const auto s = loss_summary(records, loss);
    io::write_file(out / ("summary/loss_" + std::string(to_string(loss)) + ".csv"), io::loss_table_csv(s));
    tables[to_string(loss)] = io::loss_table_json(s);
  }
  io::write_file(out / "summary/loss_tables.json", tables.dump(2) + "\n");
  io::write_file(out / "plots/coverage_out_of_sample.csv", io::coverage_plot_csv(records));
}

std::vector<io::BacktestRow> backtest_records(const std::vector<ForecastRecord>& records, const RunConfig& cfg,
                                              std::size_t threads) {
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
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tailrisk: semi-parametric VaR/ES estimation, forecasting and backtesting"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides ov;
  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  ov.bind(app.add_option("--seed")->description("master seed"), "seed");
  ov.bind(app.add_option("--threads")->description("worker threads (also TAILRISK_THREADS)"), "threads");
  ov.bind(app.add_option("--out")->description("output directory"), "out");

  // simulate
  auto* sim = app.add_subcommand("simulate", "write synthetic inputs in the ingestion formats");
  std::string sim_kind = "diffusion";
  std::size_t sim_days = 800, sim_slots = 78, sim_assets = 1;
  double sim_alpha = 0.05;
  sim->add_option("--kind", sim_kind, "garch_t | constant_t | avgarch_t | diffusion")->capture_default_str();
  sim->add_option("--days", sim_days, "days per asset")->capture_default_str();
  sim->add_option("--slots", sim_slots, "intraday intervals per day (diffusion)")->capture_default_str();
  sim->add_option("--assets", sim_assets, "number of assets")->capture_default_str();
  sim->add_option("--alpha", sim_alpha, "level for the true VaR/ES columns (daily kinds)")->capture_default_str();

  // measures
  auto* meas = app.add_subcommand("measures", "realized measures from intraday price CSVs");
  ov.bind(meas->add_option("--input")->description("intraday CSV files")->expected(1, -1), "inputs");
  ov.bind(meas->add_option("--variance")->description("RV | BPV | SV_POS | SV_NEG | MED"), "variance");
  ov.bind(meas->add_option("--tau")->description("moment smoothing days"), "tau");
  ov.bind(meas->add_option("--min-days")->description("minimum record length"), "min_days");

  // fit
  auto* fit = app.add_subcommand("fit", "complete estimation on a market CSV");
  std::vector<std::string> fit_markets;
  fit->add_option("--market", fit_markets, "market CSV files (date,return,rv,sk,ku)")->required()->check(CLI::ExistingFile);
  ov.bind(fit->add_option("--model")->description("model strings, e.g. mlt_sim or add_skk:sim:FZ0")->expected(1, -1), "models");
  ov.bind(fit->add_option("--alpha")->description("risk levels")->expected(1, -1), "alphas");
  ov.bind(fit->add_option("--starts")->description("random starting points"), "starts");
  ov.bind(fit->add_option("--keep")->description("starts kept for refinement"), "keep");
  std::string fit_loss;
  fit->add_option("--loss", fit_loss, "EM | ALS | FZ0");

  // forecast
  auto* fc = app.add_subcommand("forecast", "rolling one-step-ahead forecasts");
  std::vector<std::string> fc_markets;
  fc->add_option("--market", fc_markets, "market CSV files")->required()->check(CLI::ExistingFile);
  ov.bind(fc->add_option("--model")->description("model strings")->expected(1, -1), "models");
  ov.bind(fc->add_option("--alpha")->description("risk levels")->expected(1, -1), "alphas");
  ov.bind(fc->add_option("--window")->description("rolling window lengths")->expected(1, -1), "windows");
  ov.bind(fc->add_option("--refit-every")->description("days between complete estimations"), "refit_every");
  ov.bind(fc->add_option("--update-every")->description("days between warm updates"), "update_every");
  ov.bind(fc->add_option("--starts")->description("random starting points"), "starts");
  ov.bind(fc->add_option("--keep")->description("starts kept for refinement"), "keep");
  std::string fc_loss;
  fc->add_option("--loss", fc_loss, "EM | ALS | FZ0");

  // backtest
  auto* bt = app.add_subcommand("backtest", "DQ, PZC and ESR backtests of forecast files");
  std::vector<std::string> bt_files;
  bt->add_option("--forecast", bt_files, "forecast CSV files")->required()->check(CLI::ExistingFile);
  ov.bind(bt->add_option("--dq-lags")->description("hit lags in the DQ tests"), "dq_lags");
  ov.bind(bt->add_option("--level")->description("rejection level for the summary"), "level");

  // report
  auto* rep = app.add_subcommand("report", "summary tables from an output directory");
  std::string rep_dir;
  rep->add_option("--dir", rep_dir, "directory holding forecasts/ and backtests/ (default: --out)");
  ov.bind(rep->add_option("--level")->description("rejection level"), "level");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "measures -> fits -> forecasts -> backtests -> summary");
  ov.bind(pipe->add_option("--input")->description("intraday CSV files")->expected(1, -1), "inputs");
  ov.bind(pipe->add_option("--model")->description("model strings")->expected(1, -1), "models");
  ov.bind(pipe->add_option("--alpha")->description("risk levels")->expected(1, -1), "alphas");
  ov.bind(pipe->add_option("--window")->description("rolling window lengths")->expected(1, -1), "windows");
  ov.bind(pipe->add_option("--starts")->description("random starting points"), "starts");
  ov.bind(pipe->add_option("--simulate-assets")->description("simulate this many diffusion assets as inputs"), "simulate_assets");
  bool no_cache = false;
  pipe->add_flag("--no-cache", no_cache, "recompute every stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    ov.collect();
    RunConfig cfg = load_config(config_path, ov.kv);
    if (cfg.threads) set_thread_count(cfg.threads);
    const std::size_t threads = thread_count();
    const fs::path out = cfg.out;

    if (*sim) {
      const DgpKind kind = parse_dgp_kind(sim_kind);
      for (std::size_t a = 0; a < sim_assets; ++a) {
        char name[32];
        std::snprintf(name, sizeof name, "sim%03zu", a);
        DgpSpec d;
        d.kind = kind;
        d.seed = stream_seed(cfg.seed, 1000 + a);
        if (kind == DgpKind::diffusion) {
          const auto s = simulate_intraday(d, sim_days, sim_slots);
          io::write_file(out / "inputs" / (std::string(name) + ".csv"), io::intraday_csv(s.days));
          std::string iv = "date,integrated_variance\n";
          for (std::size_t t = 0; t < s.days.size(); ++t) iv += s.days[t].date + "," + io::fmt(s.integrated_variance[t]) + "\n";
          io::write_file(out / "truth" / (std::string(name) + ".csv"), iv);
        } else {
          const auto s = simulate_daily(d, sim_days, sim_alpha);
          io::DatedMarket m;
          m.data = s.market();
          for (std::size_t t = 0; t < m.data.size(); ++t) m.dates.push_back(synthetic_date(static_cast<std::int64_t>(t)));
          io::write_file(out / "market" / (std::string(name) + ".csv"), io::market_csv(m));
          std::string truth = "date,true_v,true_e\n";
          for (std::size_t t = 0; t < m.data.size(); ++t) {
            truth += m.dates[t] + "," + io::fmt(s.true_v[t]) + "," + io::fmt(s.true_e[t]) + "\n";
          }
          io::write_file(out / "truth" / (std::string(name) + ".csv"), truth);
        }
      }
      std::cout << "wrote " << sim_assets << " simulated asset(s) under " << out.string() << "\n";
      return 0;
    }

    if (*meas) {
      if (cfg.inputs.empty()) throw ValidationError("measures: no --input files");
      const auto ing = io::ingest(cfg.inputs, cfg.min_days);
      for (const auto& e : ing.excluded) std::cerr << "excluded " << e.asset << ": " << e.reason << "\n";
      MeasureOptions mo;
      mo.variance = parse_variance_kind(cfg.variance);
      mo.tau = cfg.tau;
      for (const auto& a : ing.assets) {
        const auto series = filter_and_interpolate(compute_realized_series(a.days, mo));
        io::write_file(out / "measures" / (a.name + ".csv"), io::measures_csv(series));
        io::write_file(out / "market" / (a.name + ".csv"), io::market_csv(io::align_market(a, series)));
      }
      std::cout << "measures for " << ing.assets.size() << " asset(s), " << ing.excluded.size() << " excluded\n";
      return 0;
    }

    if (*fit) {
      const auto models = apply_loss(cfg.models, fit_loss);
      for (const auto& path : fit_markets) {
        const auto m = io::parse_market_csv(io::read_file(path), path);
        const std::string asset = fs::path(path).stem().string();
        for (const auto& model : models) {
          for (double alpha : cfg.alphas) {
            const auto spec = parse_model(model, alpha);
            EstimatorOptions eo = cfg.estimator_options();
            eo.threads = threads;
            const FitResult f = complete_estimation(spec, m.data, eo);
            json doc = io::fit_json(f, json{{"asset", asset}, {"first", 0}, {"length", m.data.size()}});
            try {
              const auto cov = spec.has_es() ? cov_joint(f, m.data) : cov_pure_var(f, m.data);
              doc["covariance"] = io::covariance_json(cov, spec);
            } catch (const NumericalError& e) {
              doc["covariance"] = json{{"error", e.what()}};
            }
            const auto stem = detail::record_stem(asset, spec.name(), alpha);
            io::write_file(out / "fits" / (stem + ".json"), doc.dump(2) + "\n");
            std::cout << stem << ": objective " << io::fmt(f.objective) << (f.converged ? "" : " (not converged)") << "\n";
          }
        }
      }
      return 0;
    }

    if (*fc) {
      const auto models = apply_loss(cfg.models, fc_loss);
      std::vector<ForecastRecord> records;
      for (const auto& path : fc_markets) {
        const auto m = io::parse_market_csv(io::read_file(path), path);
        const std::string asset = fs::path(path).stem().string();
        struct Task {
          std::string model;
          double alpha;
          std::size_t window;
        };
        std::vector<Task> tasks;
        for (const auto& model : models)
          for (double alpha : cfg.alphas)
            for (auto w : cfg.windows) tasks.push_back({model, alpha, w});
        std::vector<ForecastRecord> recs(tasks.size());
        parallel_for(
            tasks.size(),
            [&](std::size_t i) {
              RollingConfig rc;
              rc.window = tasks[i].window;
              rc.full_refit_every = cfg.refit_every;
              rc.warm_update_every = cfg.update_every;
              rc.estimator = cfg.estimator_options();
              rc.estimator.seed = stream_seed(cfg.seed, 9000 + i);
              recs[i] = rolling_forecast(parse_model(tasks[i].model, tasks[i].alpha), m.data, rc, asset, m.dates);
            },
            threads);
        for (auto& r : recs) {
          io::write_file(out / "forecasts" / (detail::record_stem(asset, r.model, r.alpha, r.window) + ".csv"), io::forecast_csv(r));
          records.push_back(std::move(r));
        }
      }
      write_summary(out, records);
      std::cout << records.size() << " forecast record(s) written under " << out.string() << "\n";
      return 0;
    }

    if (*bt) {
      std::vector<ForecastRecord> records;
      for (const auto& p : bt_files) records.push_back(io::parse_forecast_csv(io::read_file(p), p));
      const auto rows = backtest_records(records, cfg, threads);
      io::write_file(out / "backtests/backtests.csv", io::backtests_csv(rows));
      io::write_file(out / "backtests/backtests.json", io::backtests_json(rows).dump(2) + "\n");
      io::write_file(out / "summary/non_rejection.csv", io::nonrejection_csv(rows, cfg.level));
      for (const auto& r : rows) {
        std::cout << r.asset << " " << r.model << " a=" << io::fmt(r.alpha) << " " << r.report.test_name << ": ";
        if (r.report.valid) {
          std::cout << "stat " << io::fmt(r.report.statistic) << " df " << r.report.df << " p " << io::fmt(r.report.p_value) << "\n";
        } else {
          std::cout << "invalid (" << r.report.failure_reason << ")\n";
        }
      }
      return 0;
    }

    if (*rep) {
      const fs::path dir = rep_dir.empty() ? out : fs::path(rep_dir);
      std::vector<ForecastRecord> records;
      for (const auto& p : glob_dir(dir / "forecasts", ".csv")) records.push_back(io::parse_forecast_csv(io::read_file(p), p));
      if (records.empty()) throw ValidationError("report: no forecast files under " + (dir / "forecasts").string());
      write_summary(dir, records);
      std::vector<io::BacktestRow> rows;
      for (const auto& p : {dir / "fits/in_sample_backtests.csv", dir / "backtests/backtests.csv"}) {
        if (!fs::exists(p)) continue;
        auto r = io::parse_backtests_csv(io::read_file(p), p.string());
        rows.insert(rows.end(), r.begin(), r.end());
      }
      if (!rows.empty()) io::write_file(dir / "summary/non_rejection.csv", io::nonrejection_csv(rows, cfg.level));
      std::cout << io::loss_table_csv(loss_summary(records, Loss::EM));
      return 0;
    }

    if (*pipe) {
      if (no_cache) cfg.cache = false;
      const auto res = run_pipeline(cfg);
      for (const auto& s : res.stages) std::cout << s.name << ": " << to_string(s.status) << "\n";
      std::cout << "manifest: " << (res.out / "manifest.json").string() << "\n";
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    // I/O and other environment failures count as validation problems.
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

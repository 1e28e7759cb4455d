#pragma once

// File formats: intraday price CSV ingestion, realized-measure and market CSVs,
// forecast/backtest tables, model JSON artifacts and SHA-256 file hashes.

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tailrisk/backtests.hpp"
#include "tailrisk/common.hpp"
#include "tailrisk/estimator.hpp"
#include "tailrisk/forecast_engine.hpp"
#include "tailrisk/realized_measures.hpp"
#include "tailrisk/risk_models.hpp"

namespace tailrisk::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::size_t kMinDays = 500;

// ---------------------------------------------------------------- helpers

/// Shortest text that parses back to the same double; "nan" for NaN.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

inline double parse_double(const std::string& field, const std::string& source, std::size_t line) {
  const std::string f = trim(field);
  if (f == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(f.c_str(), &end);
  if (f.empty() || end != f.c_str() + f.size() || errno == ERANGE) {
    throw ValidationError(where(source, line) + "malformed number '" + f + "'");
  }
  return v;
}

inline long long parse_int(const std::string& field, const std::string& source, std::size_t line) {
  const std::string f = trim(field);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(f.c_str(), &end, 10);
  if (f.empty() || end != f.c_str() + f.size() || errno == ERANGE) {
    throw ValidationError(where(source, line) + "malformed integer '" + f + "'");
  }
  return v;
}

inline bool valid_date(const std::string& d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (d[i] < '0' || d[i] > '9') return false;
  }
  return true;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << content;
  if (!out) throw ValidationError("write failed for " + p.string());
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericalError("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------- intraday

struct AssetData {
  std::string name;
  std::vector<IntradayDay> days;
  std::vector<std::string> dates;    // one per day
  std::vector<double> daily_returns;  // close-to-close, days[1..]
};

struct Exclusion {
  std::string asset;
  std::string reason;
};

/// Parses `date,slot_index,log_price` rows (header required). Rows of a day
/// must be contiguous, dates strictly increasing across days, and each
/// (date, slot) unique; non-consecutive slots flag the day as gapped.
inline AssetData parse_intraday_csv(const std::string& text, const std::string& source, const std::string& asset) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  if (!std::getline(in, line)) throw ValidationError(source + ": empty file");
  ++ln;
  const auto header = split(trim(line));
  if (header.size() != 3 || trim(header[0]) != "date" || trim(header[1]) != "slot_index" || trim(header[2]) != "log_price") {
    throw ValidationError(where(source, ln) + "expected header 'date,slot_index,log_price'");
  }
  AssetData a;
  a.name = asset;
  long long last_slot = -1;
  std::set<long long> seen;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 3) throw ValidationError(where(source, ln) + "expected 3 fields, got " + std::to_string(f.size()));
    const std::string date = trim(f[0]);
    if (!valid_date(date)) throw ValidationError(where(source, ln) + "malformed date '" + date + "'");
    const long long slot = parse_int(f[1], source, ln);
    if (slot < 0) throw ValidationError(where(source, ln) + "negative slot index");
    const double price = parse_double(f[2], source, ln);
    if (!std::isfinite(price)) throw ValidationError(where(source, ln) + "non-finite log price");
    if (a.days.empty() || a.days.back().date != date) {
      if (!a.days.empty() && date < a.days.back().date) {
        throw ValidationError(where(source, ln) + "non-monotone date " + date + " after " + a.days.back().date);
      }
      IntradayDay d;
      d.day_index = static_cast<std::int64_t>(a.days.size());
      d.date = date;
      if (!a.days.empty()) d.prior_close = a.days.back().log_prices.back();
      a.days.push_back(std::move(d));
      a.dates.push_back(date);
      seen.clear();
      last_slot = -1;
    }
    if (!seen.insert(slot).second) {
      throw ValidationError(where(source, ln) + "duplicate (date, slot) row (" + date + ", " + std::to_string(slot) + ")");
    }
    if (slot < last_slot) throw ValidationError(where(source, ln) + "slot indices decrease within " + date);
    auto& day = a.days.back();
    if (last_slot >= 0 && slot != last_slot + 1) day.gap = true;
    if (last_slot < 0 && slot != 0) day.gap = true;
    day.log_prices.push_back(price);
    last_slot = slot;
  }
  for (std::size_t t = 1; t < a.days.size(); ++t) {
    a.daily_returns.push_back(a.days[t].log_prices.back() - a.days[t - 1].log_prices.back());
  }
  return a;
}

inline AssetData read_intraday_csv(const fs::path& p) {
  return parse_intraday_csv(read_file(p), p.string(), p.stem().string());
}

inline std::string intraday_csv(const std::vector<IntradayDay>& days) {
  std::string s = "date,slot_index,log_price\n";
  for (const auto& d : days) {
    for (std::size_t i = 0; i < d.log_prices.size(); ++i) {
      s += d.date + "," + std::to_string(i) + "," + fmt(d.log_prices[i]) + "\n";
    }
  }
  return s;
}

struct IngestResult {
  std::vector<AssetData> assets;
  std::vector<Exclusion> excluded;
};

/// Reads every file; assets with fewer than `min_days` days are excluded with reason "min-length".
inline IngestResult ingest(const std::vector<std::string>& paths, std::size_t min_days = kMinDays) {
  IngestResult res;
  std::set<std::string> names;
  for (const auto& p : paths) {
    auto a = read_intraday_csv(p);
    if (!names.insert(a.name).second) throw ValidationError("duplicate asset name " + a.name);
    if (a.days.size() < min_days) {
      res.excluded.push_back({a.name, "min-length"});
      continue;
    }
    res.assets.push_back(std::move(a));
  }
  return res;
}

// ---------------------------------------------------------------- measures / market

inline std::string measures_csv(const RealizedSeries& s) {
  std::string out = "date,rv,mu3,mu4,sk,sk_neg,sk_pos,ku,filtered\n";
  for (const auto& d : s) {
    out += d.date + "," + fmt(d.rv) + "," + fmt(d.mu3) + "," + fmt(d.mu4) + "," + fmt(d.sk) + "," + fmt(d.sk_neg) + "," +
           fmt(d.sk_pos) + "," + fmt(d.ku) + "," + (d.filtered ? "1" : "0") + "\n";
  }
  return out;
}

inline RealizedSeries parse_measures_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  RealizedSeries s;
  if (!std::getline(in, line) || trim(line) != "date,rv,mu3,mu4,sk,sk_neg,sk_pos,ku,filtered") {
    throw ValidationError(where(source, 1) + "expected measures header");
  }
  ++ln;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 9) throw ValidationError(where(source, ln) + "expected 9 fields");
    RealizedDay d;
    d.date = trim(f[0]);
    d.rv = parse_double(f[1], source, ln);
    d.mu3 = parse_double(f[2], source, ln);
    d.mu4 = parse_double(f[3], source, ln);
    d.sk = parse_double(f[4], source, ln);
    d.sk_neg = parse_double(f[5], source, ln);
    d.sk_pos = parse_double(f[6], source, ln);
    d.ku = parse_double(f[7], source, ln);
    d.filtered = trim(f[8]) == "1";
    s.push_back(std::move(d));
  }
  return s;
}

/// Daily model inputs with their dates.
struct DatedMarket {
  std::vector<std::string> dates;
  MarketData data;
};

/// Aligns close-to-close returns with the (filtered) realized series: day t
/// carries its return and its own measures.
inline DatedMarket align_market(const AssetData& a, const RealizedSeries& measures) {
  std::map<std::string, const RealizedDay*> by_date;
  for (const auto& d : measures) by_date[d.date] = &d;
  DatedMarket m;
  for (std::size_t t = 1; t < a.days.size(); ++t) {
    const auto it = by_date.find(a.days[t].date);
    if (it == by_date.end()) continue;
    m.dates.push_back(a.days[t].date);
    m.data.returns.push_back(a.daily_returns[t - 1]);
    m.data.rv.push_back(it->second->rv);
    m.data.sk.push_back(it->second->sk);
    m.data.ku.push_back(it->second->ku);
  }
  return m;
}

inline std::string market_csv(const DatedMarket& m) {
  std::string out = "date,return,rv,sk,ku\n";
  for (std::size_t t = 0; t < m.data.size(); ++t) {
    out += m.dates[t] + "," + fmt(m.data.returns[t]) + "," + fmt(m.data.rv[t]) + "," + fmt(m.data.sk[t]) + "," +
           fmt(m.data.ku[t]) + "\n";
  }
  return out;
}

inline DatedMarket parse_market_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 1;
  if (!std::getline(in, line) || trim(line) != "date,return,rv,sk,ku") {
    throw ValidationError(where(source, 1) + "expected header 'date,return,rv,sk,ku'");
  }
  DatedMarket m;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 5) throw ValidationError(where(source, ln) + "expected 5 fields");
    const std::string date = trim(f[0]);
    if (!m.dates.empty() && !(date > m.dates.back())) {
      throw ValidationError(where(source, ln) + "dates must be strictly increasing");
    }
    m.dates.push_back(date);
    m.data.returns.push_back(parse_double(f[1], source, ln));
    m.data.rv.push_back(parse_double(f[2], source, ln));
    m.data.sk.push_back(parse_double(f[3], source, ln));
    m.data.ku.push_back(parse_double(f[4], source, ln));
  }
  m.data.validate();
  return m;
}

// ---------------------------------------------------------------- fits

inline json fit_json(const FitResult& fit, const json& window_meta = json::object()) {
  const auto l = layout(fit.spec);
  const Eigen::VectorXd x = to_vector(fit.spec, fit.params);
  json params = json::object();
  json lo = json::object(), hi = json::object();
  for (std::size_t i = 0; i < l.size; ++i) {
    params[l.names[i]] = x[static_cast<Eigen::Index>(i)];
    if (fit.box.lo.size() == static_cast<Eigen::Index>(l.size)) {
      lo[l.names[i]] = fit.box.lo[static_cast<Eigen::Index>(i)];
      hi[l.names[i]] = fit.box.hi[static_cast<Eigen::Index>(i)];
    }
  }
  return json{{"spec", fit.spec.name()},
              {"alpha", fit.spec.alpha},
              {"loss", to_string(fit.spec.loss)},
              {"params", params},
              {"objective", fit.objective},
              {"starts_tried", fit.starts_tried},
              {"refinements", fit.refinements},
              {"converged", fit.converged},
              {"fallback", fit.fallback},
              {"n_obs", fit.n_obs},
              {"burn_in", fit.burn_in},
              {"sampling_box", {{"lo", lo}, {"hi", hi}}},
              {"window_meta", window_meta},
              {"version", kVersion}};
}

inline FitResult fit_from_json(const json& j) {
  FitResult fit;
  fit.spec = parse_model(j.at("spec").get<std::string>(), j.at("alpha").get<double>());
  const auto l = layout(fit.spec);
  Eigen::VectorXd x(static_cast<Eigen::Index>(l.size));
  for (std::size_t i = 0; i < l.size; ++i) x[static_cast<Eigen::Index>(i)] = j.at("params").at(l.names[i]).get<double>();
  fit.params = from_vector(fit.spec, x);
  fit.objective = j.value("objective", 0.0);
  fit.starts_tried = j.value("starts_tried", std::size_t{0});
  fit.refinements = j.value("refinements", std::size_t{0});
  fit.converged = j.value("converged", false);
  fit.fallback = j.value("fallback", false);
  fit.n_obs = j.value("n_obs", std::size_t{0});
  fit.burn_in = j.value("burn_in", std::size_t{50});
  return fit;
}

inline json covariance_json(const CovarianceReport& c, const ModelSpec& spec) {
  const auto l = layout(spec);
  json se = json::object();
  for (std::size_t i = 0; i < l.size && i < static_cast<std::size_t>(c.se.size()); ++i) {
    se[l.names[i]] = c.se[static_cast<Eigen::Index>(i)];
  }
  json sigma = json::array();
  for (Eigen::Index i = 0; i < c.sigma.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < c.sigma.cols(); ++k) row.push_back(c.sigma(i, k));
    sigma.push_back(row);
  }
  return json{{"se", se}, {"sigma", sigma}, {"bandwidth", c.bandwidth}, {"condition", c.condition}, {"n_obs", c.n_obs}};
}

// ---------------------------------------------------------------- forecasts

inline const char* to_string(UpdateKind u) noexcept {
  switch (u) {
    case UpdateKind::none: return "none";
    case UpdateKind::complete: return "complete";
    case UpdateKind::warm: return "warm";
    case UpdateKind::fallback: return "fallback";
  }
  return "?";
}

inline UpdateKind parse_update(const std::string& s) {
  for (auto u : {UpdateKind::none, UpdateKind::complete, UpdateKind::warm, UpdateKind::fallback}) {
    if (s == to_string(u)) return u;
  }
  throw ValidationError("unknown update kind '" + s + "'");
}

inline constexpr const char* kForecastHeader = "asset,model,alpha,window,index,date,v,e,r,hit,em,als,fz0,failed,update";

inline std::string forecast_csv(const ForecastRecord& rec) {
  std::string out = std::string(kForecastHeader) + "\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < rec.size(); ++k) {
    out += rec.asset + "," + rec.model + "," + fmt(rec.alpha) + "," + std::to_string(rec.window) + "," +
           std::to_string(rec.first_index + k) + "," + (rec.dates.empty() ? std::string() : rec.dates[k]) + "," +
           fmt(rec.v[k]) + "," + fmt(rec.has_es() ? rec.e[k] : nan) + "," + fmt(rec.r[k]) + "," +
           std::to_string(rec.hit[k]) + "," + fmt(rec.em[k]) + "," + fmt(rec.als[k]) + "," + fmt(rec.fz0[k]) + "," +
           (rec.failed[k] ? "1" : "0") + "," + to_string(rec.update[k]) + "\n";
  }
  return out;
}

inline ForecastRecord parse_forecast_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 1;
  if (!std::getline(in, line) || trim(line) != kForecastHeader) {
    throw ValidationError(where(source, 1) + "expected forecast header");
  }
  ForecastRecord rec;
  bool first = true;
  bool any_e = false;
  std::vector<double> e;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    const auto f = split(line);
    if (f.size() != 15) throw ValidationError(where(source, ln) + "expected 15 fields");
    if (first) {
      rec.asset = f[0];
      rec.model = f[1];
      rec.alpha = parse_double(f[2], source, ln);
      rec.window = static_cast<std::size_t>(parse_int(f[3], source, ln));
      rec.first_index = static_cast<std::size_t>(parse_int(f[4], source, ln));
      first = false;
    } else if (f[0] != rec.asset || f[1] != rec.model) {
      throw ValidationError(where(source, ln) + "a forecast file must hold a single asset and model");
    }
    if (!trim(f[5]).empty()) rec.dates.push_back(trim(f[5]));
    rec.v.push_back(parse_double(f[6], source, ln));
    e.push_back(parse_double(f[7], source, ln));
    rec.r.push_back(parse_double(f[8], source, ln));
    rec.hit.push_back(static_cast<int>(parse_int(f[9], source, ln)));
    rec.em.push_back(parse_double(f[10], source, ln));
    rec.als.push_back(parse_double(f[11], source, ln));
    rec.fz0.push_back(parse_double(f[12], source, ln));
    rec.failed.push_back(trim(f[13]) == "1");
    rec.update.push_back(parse_update(trim(f[14])));
  }
  // Joint models are recognized by their model string.
  const auto spec = parse_model(rec.model.empty() ? "mlt_sim" : rec.model, rec.alpha > 0 && rec.alpha < 1 ? rec.alpha : 0.05);
  any_e = spec.has_es();
  if (any_e) rec.e = std::move(e);
  if (!rec.dates.empty() && rec.dates.size() != rec.v.size()) throw ValidationError(source + ": some rows lack dates");
  return rec;
}

// ---------------------------------------------------------------- backtests / summaries

struct BacktestRow {
  std::string asset, model, sample;  // sample: "in" or "out"
  double alpha = 0.0;
  std::size_t window = 0;
  BacktestReport report;
};

inline constexpr const char* kBacktestHeader = "asset,model,alpha,window,sample,test,statistic,df,p_value,valid,reason";

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string backtests_csv(const std::vector<BacktestRow>& rows) {
  std::string out = std::string(kBacktestHeader) + "\n";
  for (const auto& r : rows) {
    out += r.asset + "," + r.model + "," + fmt(r.alpha) + "," + std::to_string(r.window) + "," + r.sample + "," +
           r.report.test_name + "," + fmt(r.report.statistic) + "," + std::to_string(r.report.df) + "," +
           fmt(r.report.p_value) + "," + (r.report.valid ? "1" : "0") + "," + csv_escape(r.report.failure_reason) + "\n";
  }
  return out;
}

inline json backtests_json(const std::vector<BacktestRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back(json{{"asset", r.asset},
                       {"model", r.model},
                       {"alpha", r.alpha},
                       {"window", r.window},
                       {"sample", r.sample},
                       {"test", r.report.test_name},
                       {"statistic", r.report.valid ? json(r.report.statistic) : json(nullptr)},
                       {"df", r.report.df},
                       {"design_columns", r.report.design_columns},
                       {"p_value", r.report.valid ? json(r.report.p_value) : json(nullptr)},
                       {"valid", r.report.valid},
                       {"reason", r.report.failure_reason}});
  }
  return arr;
}

inline std::vector<BacktestRow> parse_backtests_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 1;
  if (!std::getline(in, line) || trim(line) != kBacktestHeader) throw ValidationError(where(source, 1) + "expected backtest header");
  std::vector<BacktestRow> rows;
  while (std::getline(in, line)) {
    ++ln;
    if (trim(line).empty()) continue;
    // The reason column may be quoted and contain commas; it is last.
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    f.push_back(cur);
    if (f.size() != 11) throw ValidationError(where(source, ln) + "expected 11 fields");
    BacktestRow r;
    r.asset = f[0];
    r.model = f[1];
    r.alpha = parse_double(f[2], source, ln);
    r.window = static_cast<std::size_t>(parse_int(f[3], source, ln));
    r.sample = f[4];
    r.report.test_name = f[5];
    r.report.statistic = parse_double(f[6], source, ln);
    r.report.df = static_cast<std::size_t>(parse_int(f[7], source, ln));
    r.report.p_value = parse_double(f[8], source, ln);
    r.report.valid = trim(f[9]) == "1";
    r.report.failure_reason = f[10];
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Non-rejection frequency per (model, alpha, window, sample, test) over valid rows.
inline std::string nonrejection_csv(const std::vector<BacktestRow>& rows, double level = 0.05) {
  struct Acc {
    std::size_t valid = 0, kept = 0, total = 0;
  };
  std::map<std::tuple<std::string, double, std::size_t, std::string, std::string>, Acc> acc;
  for (const auto& r : rows) {
    auto& a = acc[{r.model, r.alpha, r.window, r.sample, r.report.test_name}];
    ++a.total;
    if (!r.report.valid) continue;
    ++a.valid;
    if (!r.report.rejects(level)) ++a.kept;
  }
  std::string out = "model,alpha,window,sample,test,level,non_rejection,valid_assets,total_assets\n";
  for (const auto& [k, a] : acc) {
    const auto& [model, alpha, window, sample, test] = k;
    const double freq = a.valid ? static_cast<double>(a.kept) / static_cast<double>(a.valid)
                                : std::numeric_limits<double>::quiet_NaN();
    out += model + "," + fmt(alpha) + "," + std::to_string(window) + "," + sample + "," + test + "," + fmt(level) + "," +
           fmt(freq) + "," + std::to_string(a.valid) + "," + std::to_string(a.total) + "\n";
  }
  return out;
}

inline std::string loss_table_csv(const LossSummary& s) {
  std::string out = "loss,model,alpha,window,median_loss,display,mean_rank,n_assets,n_excluded\n";
  for (const auto& r : s.rows) {
    out += std::string(to_string(s.loss)) + "," + r.model + "," + fmt(r.alpha) + "," + std::to_string(r.window) + "," +
           fmt(r.median_loss) + "," + fmt(r.display) + "," + fmt(r.mean_rank) + "," + std::to_string(r.n_assets) + "," +
           std::to_string(r.n_excluded) + "\n";
  }
  return out;
}

inline json loss_table_json(const LossSummary& s) {
  json arr = json::array();
  for (const auto& r : s.rows) {
    arr.push_back(json{{"loss", to_string(s.loss)},
                       {"model", r.model},
                       {"alpha", r.alpha},
                       {"window", r.window},
                       {"median_loss", std::isfinite(r.median_loss) ? json(r.median_loss) : json(nullptr)},
                       {"display", std::isfinite(r.display) ? json(r.display) : json(nullptr)},
                       {"mean_rank", std::isfinite(r.mean_rank) ? json(r.mean_rank) : json(nullptr)},
                       {"n_assets", r.n_assets},
                       {"n_excluded", r.n_excluded}});
  }
  return arr;
}

/// Plot data: one row per record with its coverage and failed-day fraction.
/// Columns: asset,model,alpha,window,sample,coverage,failure_fraction,n_days.
inline std::string coverage_plot_csv(const std::vector<ForecastRecord>& recs) {
  std::string out = "asset,model,alpha,window,sample,coverage,failure_fraction,n_days\n";
  for (const auto& r : recs) {
    std::size_t failed = 0;
    for (bool f : r.failed) failed += f ? 1 : 0;
    double cov = std::numeric_limits<double>::quiet_NaN();
    if (failed < r.size()) cov = empirical_coverage(r);
    out += r.asset + "," + r.model + "," + fmt(r.alpha) + "," + std::to_string(r.window) + ",out," + fmt(cov) + "," +
           fmt(r.size() ? static_cast<double>(failed) / static_cast<double>(r.size()) : 0.0) + "," +
           std::to_string(r.size()) + "\n";
  }
  return out;
}

}  // namespace tailrisk::io

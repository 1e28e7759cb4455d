#include <algorithm>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "tailrisk/forecast_engine.hpp"
#include "test_util.hpp"

using namespace tailrisk;
using Catch::Matchers::WithinAbs;

namespace {

RollingConfig small_config(std::size_t window, std::size_t refit = 100, std::size_t warm = 50) {
  RollingConfig c;
  c.window = window;
  c.full_refit_every = refit;
  c.warm_update_every = warm;
  c.estimator.n_starts = 200;
  c.estimator.m_keep = 2;
  c.estimator.threads = 1;
  c.estimator.seed = 17;
  return c;
}

bool same_doubles(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] == b[i] || (std::isnan(a[i]) && std::isnan(b[i])))) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("rolling forecast shape", "[rolling_forecast]") {
  const auto data = fixtures::market(1, 301);
  const auto spec = parse_model("mlt_sim:sim:FZ0");
  const auto rec = rolling_forecast(spec, data, small_config(300), "A");
  REQUIRE(rec.size() == 1);
  CHECK(rec.first_index == 300);
  CHECK(rec.r[0] == data.returns[300]);
  CHECK(rec.update[0] == UpdateKind::complete);
  CHECK(rec.e[0] < rec.v[0]);
  CHECK(rec.em[0] == em_score(rec.r[0], rec.v[0], 0.05));
  CHECK(rec.fz0[0] == fz0_score(rec.r[0], {rec.v[0], rec.e[0], 0.05}));
  CHECK_THROWS_AS(rolling_forecast(spec, data.slice(0, 300), small_config(300)), ValidationError);
  CHECK_THROWS_AS(rolling_forecast(spec, data, small_config(300, 100, 30)), ValidationError);
  // The forecast is the filter run over the estimation window, one step ahead.
  auto opt = small_config(300).estimator;
  opt.seed = stream_seed(17, 0);
  const auto fit = complete_estimation(spec, data.slice(0, 300), opt);
  const auto f = forecast_next(spec, fit.params, data.slice(0, 300));
  CHECK(rec.v[0] == f.v);
  CHECK(rec.e[0] == f.e);
}

TEST_CASE("rolling forecasts are deterministic and use only past data", "[rolling_forecast][property]") {
  const auto data = fixtures::market(2, 700);
  for (const char* m : {"add_skk", "mlt_lev:skk:ALS"}) {
    const auto spec = parse_model(m);
    const auto cfg = small_config(300);
    const auto a = rolling_forecast(spec, data, cfg);
    const auto b = rolling_forecast(spec, data, cfg);
    CHECK(same_doubles(a.v, b.v));
    CHECK(same_doubles(a.e, b.e));
    CHECK(a.failed == b.failed);
    const auto cut = rolling_forecast(spec, data.slice(0, 550), cfg);
    REQUIRE(cut.size() == 250);
    CHECK(same_doubles(cut.v, {a.v.begin(), a.v.begin() + 250}));
    if (spec.has_es()) CHECK(same_doubles(cut.e, {a.e.begin(), a.e.begin() + 250}));
    CHECK(std::equal(cut.failed.begin(), cut.failed.end(), a.failed.begin()));
    std::size_t completes = 0, warms = 0;
    for (auto u : a.update) {
      completes += u == UpdateKind::complete;
      warms += u == UpdateKind::warm || u == UpdateKind::fallback;
    }
    CHECK(completes == 4);
    CHECK(warms == 4);
  }
}

TEST_CASE("longer refit intervals leave earlier forecasts unchanged", "[rolling_forecast][property]") {
  const auto data = fixtures::market(3, 650);
  const auto spec = parse_model("mlt_sim");
  const auto a = rolling_forecast(spec, data, small_config(300, 100));
  const auto b = rolling_forecast(spec, data, small_config(300, 200));
  for (std::size_t k = 0; k < 100; ++k) CHECK(a.v[k] == b.v[k]);
  bool differs = false;
  for (std::size_t k = 100; k < a.size(); ++k) differs |= a.v[k] != b.v[k];
  CHECK(differs);
}

TEST_CASE("failed estimation stretches are flagged", "[rolling_forecast]") {
  auto data = fixtures::market(4, 600);
  for (std::size_t t = 300; t < 600; ++t) {
    data.returns[t] = 0.0;
    data.rv[t] = 0.0;
  }
  const auto spec = parse_model("mlt_sim");
  const auto rec = rolling_forecast(spec, data, small_config(200));
  // The window for k = 300 holds only zero returns: the scheduled complete
  // estimation fails and the previous parameters are carried forward.
  REQUIRE(rec.update[300] == UpdateKind::none);
  CHECK(rec.failed[300]);
  CHECK(std::isfinite(rec.v[300]));
  CHECK_FALSE(rec.failed[299]);
  std::size_t n = 0, hits = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec.failed[k]) continue;
    ++n;
    hits += rec.hit[k];
  }
  CHECK(empirical_coverage(rec) == static_cast<double>(hits) / static_cast<double>(n));
}

TEST_CASE("out-of-sample coverage on correctly specified data", "[rolling_forecast][montecarlo]") {
  const auto spec = parse_model("mlt_sim", 0.05);
  RollingConfig cfg = small_config(1000, 500, 50);
  cfg.estimator.n_starts = 1000;
  cfg.estimator.m_keep = 3;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    const auto rec = rolling_forecast(spec, fixtures::market(seed, 3000), cfg);
    INFO("seed " << seed);
    CHECK_THAT(empirical_coverage(rec), WithinAbs(0.05, 0.015));
  }
}

TEST_CASE("empirical coverage", "[empirical_coverage]") {
  CHECK(empirical_coverage(std::vector<int>(7, 1)) == 1.0);
  CHECK(empirical_coverage(std::vector<int>(7, 0)) == 0.0);
  const std::vector<int> alt{1, 0, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(empirical_coverage(alt) == 0.2);
  CHECK_THROWS_AS(empirical_coverage(std::vector<int>{}), ValidationError);
}

TEST_CASE("loss summary examples", "[loss_summary]") {
  SECTION("dominating model") {
    std::vector<std::vector<double>> t{{0.1, 0.2}, {0.3, 0.5}, {0.05, 0.06}};
    const auto s = loss_summary(oracles::records_from_table(t), Loss::EM);
    REQUIRE(s.rows.size() == 2);
    CHECK(s.rows[0].mean_rank == 1.0);
    CHECK(s.rows[1].mean_rank == 2.0);
    CHECK(s.rows[0].median_loss == 0.1);
    CHECK(s.rows[0].display == 1000.0 * 0.1);
  }
  SECTION("single asset") {
    const auto s = loss_summary(oracles::records_from_table({{0.25, 0.125, 0.25}}), Loss::EM);
    CHECK(s.rows[0].median_loss == 0.25);
    CHECK(s.rows[1].median_loss == 0.125);
    CHECK(s.rows[0].mean_rank == 2.5);
    CHECK(s.rows[1].mean_rank == 1.0);
  }
  SECTION("records over different days") {
    auto recs = oracles::records_from_table({{0.1, 0.2}});
    recs[1].first_index = 501;
    CHECK_THROWS_AS(loss_summary(recs, Loss::EM), ValidationError);
  }
  SECTION("joint losses skip pure-VaR records") {
    CHECK(loss_summary(oracles::records_from_table({{0.1}}), Loss::FZ0).rows.empty());
  }
}

TEST_CASE("loss summary matches the brute-force oracle", "[loss_summary][property]") {
  auto& g = testutil::rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const auto table = oracles::loss_table(g, 20, 6);
    auto recs = oracles::records_from_table(table);
    const auto s = loss_summary(recs, Loss::EM);
    REQUIRE(s.rows.size() == 6);
    for (std::size_t m = 0; m < 6; ++m) {
      std::vector<double> col;
      double rank = 0.0;
      for (const auto& row : table) {
        col.push_back(row[m]);
        rank += oracles::rank_of(row, m);
      }
      CHECK(s.rows[m].median_loss == oracles::median(col));
      CHECK(s.rows[m].mean_rank == rank / 20.0);
      CHECK(s.rows[m].n_assets == 20);
    }
    std::shuffle(recs.begin(), recs.end(), g);
    const auto p = loss_summary(recs, Loss::EM);
    for (std::size_t m = 0; m < 6; ++m) {
      CHECK(p.rows[m].median_loss == s.rows[m].median_loss);
      CHECK(p.rows[m].mean_rank == s.rows[m].mean_rank);
    }
  }
}

TEST_CASE("failed days and incomplete assets are excluded", "[loss_summary]") {
  auto recs = oracles::records_from_table({{0.1, 0.2}, {0.3, 0.1}});
  recs[3].failed[0] = true;  // asset1, model1
  const auto s = loss_summary(recs, Loss::EM);
  CHECK(s.rows[1].n_assets == 1);
  CHECK(s.rows[1].n_excluded == 1);
  CHECK(s.rows[0].median_loss == 0.2);
  // Only asset0 is complete, so ranks come from it alone.
  CHECK(s.rows[0].mean_rank == 1.0);
  CHECK(s.rows[1].mean_rank == 2.0);
}

#include <algorithm>

#include "fixtures.hpp"
#include "tailrisk/backtests.hpp"
#include "tailrisk/simulation.hpp"
#include "test_util.hpp"

using namespace tailrisk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Plain normal-equation projection statistic for a full-rank design.
double projection_stat(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double alpha) {
  const Eigen::MatrixXd xtx = X.transpose() * X;
  const Eigen::VectorXd xty = X.transpose() * y;
  return xty.dot(xtx.llt().solve(xty)) / (alpha * (1.0 - alpha));
}

// HAC covariance written out term by term.
Eigen::MatrixXd nw_oracle(const Eigen::MatrixXd& g, std::size_t lags) {
  const auto n = g.rows(), k = g.cols();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (Eigen::Index u = 0; u < n; ++u) {
      const auto j = static_cast<std::size_t>(std::abs(t - u));
      if (j > lags) continue;
      const double w = 1.0 - static_cast<double>(j) / static_cast<double>(lags + 1);
      s += w * g.row(t).transpose() * g.row(u);
    }
  }
  return s / static_cast<double>(n);
}

struct Forecasts {
  std::vector<double> r, v, e;
};

Forecasts truth(std::uint64_t seed, std::size_t T, double alpha = 0.05) {
  DgpSpec d;
  d.seed = seed;
  const auto s = simulate_daily(d, T, alpha);
  return {s.returns, s.true_v, s.true_e};
}

}  // namespace

TEST_CASE("hit series", "[hits]") {
  const auto f = truth(1, 500);
  const auto h = make_hits(f.r, f.v, 0.05);
  for (double x : h.values) CHECK((x == -0.05 || x == 0.95));
  CHECK_THROWS_AS(make_hits(f.r, std::vector<double>(3, -1.0), 0.05), ValidationError);
}

TEST_CASE("Newey-West covariance", "[newey_west]") {
  auto& g = testutil::rng(2);
  Eigen::MatrixXd m(60, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = testutil::uniform(g, -1, 1);
  CHECK(newey_west(m, 0).isApprox(m.transpose() * m / 60.0, 1e-14));
  for (std::size_t lags : {1u, 5u, 20u}) {
    const auto s = newey_west(m, lags);
    CHECK(s.isApprox(nw_oracle(m, lags), 1e-12));
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s).eigenvalues().minCoeff() >= -1e-14);
  }
  // White noise: the lag-20 estimate stays within 10% of the lag-0 one in the
  // typical replication (sampling sd of the ratio is about 0.075 at T=5000).
  std::vector<double> dev;
  for (int rep = 0; rep < 100; ++rep) {
    const auto z = testutil::normals(g, 5000);
    const Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(z.data(), 5000, 1);
    dev.push_back(std::abs(newey_west(w, 20)(0, 0) / newey_west(w, 0)(0, 0) - 1.0));
  }
  std::sort(dev.begin(), dev.end());
  CHECK(dev[50] < 0.1);
}

TEST_CASE("out-of-sample DQ", "[dq_out_of_sample]") {
  const auto f = truth(3, 1000);
  const auto cc = dq_out_of_sample(f.v, f.r, 0.05, DqVariant::CC, 4);
  const auto id = dq_out_of_sample(f.v, f.r, 0.05, DqVariant::ID, 4);
  CHECK(cc.df == 6);
  CHECK(id.df == 5);
  CHECK(cc.test_name == "CC-DQ_OOS");
  CHECK(id.test_name == "ID-DQ_OOS");
  const auto hits = make_hits(f.r, f.v, 0.05, 4);
  const Eigen::MatrixXd X = dq_oos_design(hits, f.v, DqVariant::CC);
  const Eigen::MatrixXd Xid = dq_oos_design(hits, f.v, DqVariant::ID);
  CHECK(Xid == X.rightCols(X.cols() - 1));
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(hits.values.data() + 4, 996);
  CHECK_THAT(cc.statistic, WithinRel(projection_stat(X, y, 0.05), 1e-10));
  CHECK_THAT(id.statistic, WithinRel(projection_stat(Xid, y, 0.05), 1e-10));
  CHECK_THAT(cc.p_value, WithinAbs(chi2_sf(cc.statistic, 6), 1e-15));

  SECTION("zero hits") {
    // Hit = -alpha every day lies in the span of the constant column.
    const std::size_t H = 250;
    std::vector<double> v(H), r(H);
    auto& g = testutil::rng(4);
    for (std::size_t t = 0; t < H; ++t) {
      v[t] = -2.0 - testutil::uniform(g, 0, 1);
      r[t] = testutil::uniform(g, -1.0, 1.0);
    }
    const double alpha = 0.01;
    const double expect = static_cast<double>(H - 4) * alpha / (1.0 - alpha);
    for (auto var : {DqVariant::CC, DqVariant::ID}) {
      const auto rep = dq_out_of_sample(v, r, alpha, var, 4);
      CHECK(rep.valid);
      CHECK(rep.df == 2);
      CHECK_THAT(rep.statistic, WithinRel(expect, 1e-9));
    }
  }
  SECTION("hit order matters") {
    const std::size_t H = 400;
    std::vector<double> v(H, -1.0), r(H, 0.0), r2(H, 0.0);
    for (std::size_t t = 100; t < 120; ++t) r[t] = -2.0;  // one cluster of 20 hits
    for (std::size_t t = 0; t < 20; ++t) r2[10 + 19 * t] = -2.0;  // the same hits spread out
    const auto a = dq_out_of_sample(v, r, 0.05, DqVariant::CC, 4);
    const auto b = dq_out_of_sample(v, r2, 0.05, DqVariant::CC, 4);
    CHECK(a.statistic > 10.0 * b.statistic);
    CHECK(a.p_value < 1e-6);
  }
  SECTION("level shifts") {
    // With a constant column and the VaR level as regressor, shifting returns and
    // forecasts together spans the same design; without the constant it does not.
    std::vector<double> r2 = f.r, v2 = f.v;
    for (auto& x : r2) x += 0.7;
    for (auto& x : v2) x += 0.7;
    CHECK_THAT(dq_out_of_sample(v2, r2, 0.05, DqVariant::CC).statistic, WithinRel(cc.statistic, 1e-8));
    CHECK(std::abs(dq_out_of_sample(v2, r2, 0.05, DqVariant::ID).statistic - id.statistic) > 1e-6 * id.statistic);
  }
  CHECK_THROWS_AS(dq_out_of_sample(std::vector<double>(10, -1.0), std::vector<double>(10, 0.0), 0.05), ValidationError);
}

TEST_CASE("in-sample DQ", "[dq_in_sample]") {
  const auto data = fixtures::market(5, 1500);
  EstimatorOptions opt;
  opt.n_starts = 500;
  opt.m_keep = 3;
  opt.threads = 1;
  const auto spec = parse_model("mlt_sim", 0.05);
  const auto fit = complete_estimation(spec, data, opt);
  const auto cc = dq_in_sample(fit, data, DqVariant::CC, 4);
  const auto id = dq_in_sample(fit, data, DqVariant::ID, 4);
  CHECK(cc.design_columns == 6);
  CHECK(id.design_columns == 5);
  CHECK(cc.valid);
  CHECK(cc.df <= 6);
  CHECK(cc.statistic >= 0.0);
  CHECK(cc.p_value >= 0.0);
  CHECK(cc.p_value <= 1.0);
  CHECK(cc.test_name == "CC-DQ_IS");
  CHECK_THROWS_AS(dq_in_sample(complete_estimation(parse_model("mlt_sim:sim:FZ0"), data, opt), data), ValidationError);
  // Zero hit deviations: the quadratic form vanishes.
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(50, 3);
  const auto zero = dq_from_design(X, Eigen::VectorXd::Zero(50), 0.05, "zero");
  CHECK(zero.statistic == 0.0);
  CHECK(zero.p_value == 1.0);
  // Instrument columns only enter through the design.
  const auto path = filter_path(spec, fit.params, data);
  const auto grads = gradient_path(spec, fit.params, data);
  std::vector<std::vector<double>> inst{path.v, std::vector<double>(path.v.size())};
  for (std::size_t t = 1; t < path.v.size(); ++t) inst[1][t] = path.v[t - 1];
  const auto two = dq_in_sample(data.returns, path.v, grads.dv, 0.05, DqVariant::CC, 4, &inst, fit.burn_in);
  CHECK(two.design_columns == 7);
  const auto one = dq_in_sample(data.returns, path.v, grads.dv, 0.05, DqVariant::CC, 4, nullptr, fit.burn_in);
  CHECK(one.statistic == cc.statistic);
}

TEST_CASE("PZC calibration tests", "[pzc_test]") {
  const auto f = truth(6, 1200);
  const double alpha = 0.05;
  CHECK_THAT(es_residual(0.5, -1.0, -2.0, alpha), WithinAbs(-1.0, 0.0));
  CHECK_THAT(es_residual(-3.0, -1.0, -2.0, alpha), WithinAbs(-3.0 / (alpha * -2.0) - 1.0, 1e-15));
  for (auto target : {PzcTarget::VaR, PzcTarget::ES}) {
    const auto rep = pzc_test(f.v, f.e, f.r, alpha, target, 20);
    // Independent regression and HAC sandwich.
    const std::size_t T = f.r.size();
    Eigen::MatrixXd X(T - 1, 3);
    Eigen::VectorXd y(T - 1);
    for (std::size_t t = 1; t < T; ++t) {
      const double hit = (f.r[t] <= f.v[t]) - alpha;
      X.row(t - 1) << 1.0, (f.r[t - 1] <= f.v[t - 1]) - alpha, target == PzcTarget::VaR ? f.v[t] : f.e[t];
      y[t - 1] = target == PzcTarget::VaR ? hit : (f.r[t] <= f.v[t]) * f.r[t] / (alpha * f.e[t]) - 1.0;
    }
    const Eigen::VectorXd a = (X.transpose() * X).llt().solve(X.transpose() * y);
    const Eigen::VectorXd u = y - X * a;
    Eigen::MatrixXd G = X;
    for (Eigen::Index i = 0; i < G.rows(); ++i) G.row(i) *= u[i];
    const double n = static_cast<double>(T - 1);
    const Eigen::MatrixXd Qi = (X.transpose() * X / n).inverse();
    const Eigen::MatrixXd om = Qi * nw_oracle(G, 20) * Qi / n;
    INFO(to_string(target));
    CHECK_THAT(rep.statistic, WithinRel(a.dot(om.llt().solve(a)), 1e-8));
    CHECK(rep.df == 3);
  }
  CHECK_THROWS_AS(pzc_test(f.v, {}, f.r, alpha, PzcTarget::ES), ValidationError);
  CHECK(pzc_test(f.v, {}, f.r, alpha, PzcTarget::VaR).valid);
  const std::vector<double> flat(500, -1.0), zeros(500, 0.0);
  CHECK_FALSE(pzc_test(flat, flat, zeros, alpha, PzcTarget::VaR).valid);

  SECTION("level shifts") {
    std::vector<double> r2 = f.r, v2 = f.v, e2 = f.e;
    for (auto* x : {&r2, &v2, &e2}) {
      for (auto& z : *x) z -= 0.3;
    }
    const auto var0 = pzc_test(f.v, f.e, f.r, alpha, PzcTarget::VaR);
    const auto es0 = pzc_test(f.v, f.e, f.r, alpha, PzcTarget::ES);
    CHECK_THAT(pzc_test(v2, e2, r2, alpha, PzcTarget::VaR).statistic, WithinRel(var0.statistic, 1e-8));
    CHECK(std::abs(pzc_test(v2, e2, r2, alpha, PzcTarget::ES).statistic - es0.statistic) > 1e-6 * es0.statistic);
  }
}

TEST_CASE("ESR regressions", "[esr_test]") {
  const auto f = truth(7, 2000);
  const double alpha = 0.05;
  EsrOptions opt;
  opt.n_perturb = 300;
  opt.m_keep = 3;
  for (auto var : {EsrVariant::auxiliary, EsrVariant::strict, EsrVariant::strict_intercept}) {
    for (auto loss : {Loss::FZ0, Loss::ALS}) {
      opt.loss = loss;
      const auto rep = esr_test(f.v, f.e, f.r, alpha, var, opt);
      INFO(to_string(var) << " " << to_string(loss));
      REQUIRE(rep.valid);
      CHECK(rep.df == (var == EsrVariant::strict_intercept ? 1u : 2u));
      CHECK(rep.statistic >= 0.0);
      // True forecasts. ALS drops the r/e term, so its minimizer moves with the
      // response mean; r - e has nonzero mean and ALS is not usable there.
      if (loss == Loss::FZ0 || var != EsrVariant::strict_intercept) CHECK(rep.p_value > 1e-4);
      const auto fit = esr_fit(f.v, f.e, f.r, alpha, var, opt);
      // Wald form re-evaluated from the reported fit.
      Eigen::VectorXd null = Eigen::VectorXd::Zero(var == EsrVariant::strict_intercept ? 1 : 2);
      if (var != EsrVariant::strict_intercept) null[1] = 1.0;
      std::vector<std::size_t> idx{fit.n_beta};
      if (var != EsrVariant::strict_intercept) idx.push_back(fit.n_beta + 1);
      CHECK_THAT(wald_test(fit.theta, fit.cov.sigma, idx, null).statistic, WithinRel(rep.statistic, 1e-12));
      // At the null the statistic is exactly zero.
      Eigen::VectorXd at_null = fit.theta;
      for (std::size_t k = 0; k < idx.size(); ++k) at_null[static_cast<Eigen::Index>(idx[k])] = null[static_cast<Eigen::Index>(k)];
      const auto w0 = wald_test(at_null, fit.cov.sigma, idx, null);
      CHECK(w0.statistic == 0.0);
      CHECK(w0.p_value == 1.0);
    }
  }
  CHECK_THROWS_AS(esr_test({}, f.e, f.r, alpha, EsrVariant::auxiliary), ValidationError);
  CHECK_THROWS_AS(esr_test(f.v, {}, f.r, alpha, EsrVariant::strict), ValidationError);
  opt.loss = Loss::EM;
  CHECK_THROWS_AS(esr_test(f.v, f.e, f.r, alpha, EsrVariant::strict, opt), ValidationError);
}

TEST_CASE("ESR under the null and under scaled forecasts", "[esr_test][montecarlo]") {
  DgpSpec dgp;
  dgp.seed = 2024;
  StudyConfig cfg;
  cfg.esr.n_perturb = 300;
  cfg.esr.m_keep = 3;
  const auto spec = parse_model("mlt_sim:sim:FZ0");
  const auto null = size_study(StudyTest::ESR_strict, dgp, spec, 300, 0.05, cfg);
  INFO("null rejection " << null.rate << " valid " << null.valid);
  CHECK(null.valid >= 290);
  CHECK(1.0 - null.rate >= 0.85);
  cfg.forecast_scale = 1.5;
  for (auto t : {StudyTest::ESR_auxiliary, StudyTest::ESR_strict}) {
    const auto alt = size_study(t, dgp, spec, 100, 0.05, cfg);
    INFO(to_string(t) << " power " << alt.rate);
    CHECK(alt.rate > null.rate);
  }
}

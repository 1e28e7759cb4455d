#include <algorithm>

#include "fixtures.hpp"
#include "tailrisk/inference.hpp"
#include "test_util.hpp"

using namespace tailrisk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

EstimatorOptions quick(std::size_t starts, std::size_t keep, std::uint64_t seed) {
  EstimatorOptions o;
  o.n_starts = starts;
  o.m_keep = keep;
  o.seed = seed;
  o.threads = 1;
  return o;
}

// True mlt_sim coefficients for the GARCH-t generator with rv = r^2.
Eigen::Vector3d garch_truth(const DgpSpec& dgp, double alpha) {
  const double q = std_t_quantile(alpha, dgp.nu);
  return {q * q * dgp.omega, q * q * dgp.alpha_g, dgp.beta};
}

}  // namespace

TEST_CASE("bandwidth choices", "[inference]") {
  CHECK(bandwidth_rank(0.01) == 40.0);
  CHECK_THAT(bandwidth_rank(0.05), WithinAbs(60.0, 1e-12));
  CHECK_THAT(bandwidth_rank(0.025), WithinAbs(47.5, 1e-12));
  CHECK_THAT(joint_bandwidth(1000), WithinRel(0.1, 1e-14));
  const std::vector<double> xs{5, 1, 4, 2, 3};
  CHECK(interpolated_order_statistic(xs, 2.0) == 2.0);
  CHECK(interpolated_order_statistic(xs, 2.5) == 2.5);
  CHECK(interpolated_order_statistic(xs, 99.0) == 5.0);
}

TEST_CASE("pure-VaR sandwich for a constant quantile", "[cov_pure_var]") {
  // With v_t = d0 the gradient is a column of ones and the sandwich reduces to
  // alpha(1-alpha) / (n f^2) with f the kernel density estimate at the quantile.
  auto& g = testutil::rng(3);
  const std::size_t T = 2000;
  const auto r = testutil::normals(g, T);
  const double alpha = 0.05, v0 = -1.6448536269514722;
  const std::vector<double> v(T, v0);
  const Eigen::MatrixXd dv = Eigen::MatrixXd::Ones(T, 1);
  const auto rep = cov_pure_var(r, v, dv, alpha);
  std::vector<double> a(T);
  for (std::size_t t = 0; t < T; ++t) a[t] = std::abs(r[t] - v0);
  std::sort(a.begin(), a.end());
  const double c = a[59];
  CHECK(rep.bandwidth == c);
  std::size_t inside = 0;
  for (double x : a) inside += x < c;
  const double f = static_cast<double>(inside) / (2.0 * T * c);
  CHECK_THAT(rep.sigma(0, 0), WithinRel(alpha * (1 - alpha) / (T * f * f), 1e-12));
  CHECK_THAT(rep.se[0], WithinRel(std::sqrt(rep.sigma(0, 0)), 1e-15));
  PureVarOptions printed;
  printed.repeat_alpha_factor = true;
  CHECK_THAT(cov_pure_var(r, v, dv, alpha, 0, printed).sigma(0, 0), WithinRel(alpha * (1 - alpha) * rep.sigma(0, 0), 1e-12));
  CHECK_THROWS_AS(cov_pure_var(r, v, Eigen::MatrixXd::Zero(T, 2), alpha), NumericalError);
}

TEST_CASE("joint sandwich matches score finite differences", "[cov_joint]") {
  const auto data = fixtures::market(5, 600);
  auto& g = testutil::rng(6);
  for (const char* m : {"mlt_sim:sim:FZ0", "add_skk:skk:ALS"}) {
    const auto spec = parse_model(m, 0.05);
    const auto p = fixtures::feasible_params(spec, data, g);
    REQUIRE(p.has_value());
    const auto path = filter_path(spec, *p, data);
    const auto gr = gradient_path(spec, *p, data);
    const auto rep = cov_joint(data.returns, path.v, path.e, gr.dv, gr.de, 0.05, spec.loss);
    // lambda_t as the derivative of the day-t score.
    const Eigen::VectorXd x = to_vector(spec, *p);
    const auto np = x.size();
    const auto T = static_cast<Eigen::Index>(data.size());
    Eigen::MatrixXd lam(T, np);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < np; ++j) {
      Eigen::VectorXd xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const auto pp = filter_path(spec, from_vector(spec, xp), data);
      const auto pm = filter_path(spec, from_vector(spec, xm), data);
      for (Eigen::Index t = 0; t < T; ++t) lam(t, j) = (pp.scores[t] - pm.scores[t]) / (2 * h);
    }
    // Days whose return sits within h of the VaR straddle the kink; drop them.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (std::abs(data.returns[t] - path.v[t]) > 1e-4) keep.push_back(t);
    }
    REQUIRE(keep.size() == static_cast<std::size_t>(T));
    const Eigen::MatrixXd A = lam.transpose() * lam / static_cast<double>(T);
    INFO(m);
    CHECK((A - rep.A_hat).cwiseAbs().maxCoeff() < 1e-5 * A.cwiseAbs().maxCoeff());
    CHECK((rep.sigma - rep.sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((rep.sigma.diagonal().array() >= 0.0).all());
    CHECK(rep.bandwidth == joint_bandwidth(data.size()));
  }
}

TEST_CASE("Wald tests", "[wald_test]") {
  Eigen::VectorXd theta(4);
  theta << 0.5, 0.0, 0.0, -0.2;
  Eigen::MatrixXd sigma = Eigen::Vector4d(0.01, 0.04, 0.09, 0.16).asDiagonal();
  const auto zero = wald_test(theta, sigma, {1, 2});
  CHECK(zero.statistic == 0.0);
  CHECK(zero.p_value == 1.0);
  CHECK(zero.df == 2);
  const auto w = wald_test(theta, sigma, {0, 2, 3});
  CHECK(w.df == 3);
  CHECK_THAT(w.statistic, WithinRel(25.0 + 0.25, 1e-12));
  CHECK_THAT(w.p_value, WithinRel(1.0 - boost::math::cdf(boost::math::chi_squared_distribution<double>(3), 25.25), 1e-10));
  CHECK_THROWS_AS(wald_test(theta, sigma, {7}), ValidationError);
  CHECK_THROWS_AS(wald_test(theta, Eigen::MatrixXd::Zero(4, 4), {0}), NumericalError);
  const auto skk = parse_model("mlt_skk:skk:FZ0");
  CHECK(coefficient_indices(skk, {"a1", "a2", "a3"}).size() == 3);
  CHECK(coefficient_indices(skk, {"b1", "b2"}) == std::vector<std::size_t>{7, 8});
  CHECK_THROWS_AS(coefficient_indices(parse_model("mlt_sim"), {"a1"}), ValidationError);
  auto& g = testutil::rng(8);
  for (int i = 0; i < 200; ++i) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Random(4, 4);
    Eigen::MatrixXd s = m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    Eigen::VectorXd th(4);
    for (auto& x : th) x = testutil::uniform(g, -1, 1);
    CHECK(wald_test(th, s, {0, 1, 3}).statistic > 0.0);
  }
}

TEST_CASE("pure-VaR intervals cover the truth", "[cov_pure_var][montecarlo]") {
  const double alpha = 0.05;
  const DgpSpec dgp;
  const Eigen::Vector3d truth = garch_truth(dgp, alpha);
  const auto spec = parse_model("mlt_sim", alpha);
  const std::size_t reps = 200;
  std::vector<Eigen::Vector3i> hit(reps, Eigen::Vector3i::Zero());
  std::vector<int> ok(reps, 0);
  parallel_for(
      reps,
      [&](std::size_t i) {
        const auto data = fixtures::market(2000 + i, 4000);
        const auto fit = complete_estimation(spec, data, quick(1000, 3, 3000 + i));
        try {
          const auto cov = cov_pure_var(fit, data);
          for (int k = 0; k < 3; ++k) hit[i][k] = std::abs(fit.params.d[k] - truth[k]) <= 1.959963984540054 * cov.se[k];
          ok[i] = (cov.se.array() > 0.0).all();
        } catch (const NumericalError&) {
        }
      },
      0);
  Eigen::Vector3d coverage = Eigen::Vector3d::Zero();
  int n_ok = 0;
  for (std::size_t i = 0; i < reps; ++i) {
    coverage += hit[i].cast<double>();
    n_ok += ok[i];
  }
  coverage /= static_cast<double>(reps);
  INFO("coverage " << coverage.transpose() << " positive se " << n_ok);
  CHECK(n_ok == static_cast<int>(reps));
  for (int k = 0; k < 3; ++k) {
    CHECK(coverage[k] >= 0.90);
    CHECK(coverage[k] <= 0.99);
  }
}

TEST_CASE("joint covariance is positive definite and the b-test has size", "[cov_joint][montecarlo]") {
  const double alpha = 0.05;
  SECTION("positive definite on mlt_sim:sim fits") {
    const auto spec = parse_model("mlt_sim:sim:FZ0", alpha);
    const std::size_t reps = 200;
    std::vector<int> pd(reps, 0);
    parallel_for(
        reps,
        [&](std::size_t i) {
          const auto data = fixtures::market(4000 + i, 4000);
          const auto fit = complete_estimation(spec, data, quick(1000, 3, 5000 + i));
          try {
            const auto cov = cov_joint(fit, data);
            pd[i] = Eigen::LLT<Eigen::MatrixXd>(cov.sigma).info() == Eigen::Success;
          } catch (const NumericalError&) {
          }
        },
        0);
    const double share = std::count(pd.begin(), pd.end(), 1) / static_cast<double>(reps);
    INFO("positive-definite share " << share);
    CHECK(share >= 0.95);
  }
  SECTION("b1 = b2 = 0 holds when the ES/VaR ratio is constant") {
    const auto spec = parse_model("mlt_sim:skk:FZ0", alpha);
    const auto idx = coefficient_indices(spec, {"b1", "b2"});
    const std::size_t reps = 300;
    std::vector<int> reject(reps, 0), valid(reps, 0);
    parallel_for(
        reps,
        [&](std::size_t i) {
          const auto data = fixtures::market(6000 + i, 4000);
          const auto fit = complete_estimation(spec, data, quick(1000, 3, 7000 + i));
          try {
            const auto w = wald_test(fit, cov_joint(fit, data), idx);
            valid[i] = 1;
            reject[i] = w.p_value < 0.05;
          } catch (const NumericalError&) {
          }
        },
        0);
    const int n = std::count(valid.begin(), valid.end(), 1);
    const double rate = std::count(reject.begin(), reject.end(), 1) / static_cast<double>(n);
    INFO("rejection rate " << rate << " over " << n);
    CHECK(n >= 290);
    CHECK(rate >= 0.02);
    CHECK(rate <= 0.10);
  }
}

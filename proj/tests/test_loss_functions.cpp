#include <algorithm>
#include <functional>
#include <numbers>

#include "tailrisk/loss_functions.hpp"
#include "test_util.hpp"

using namespace tailrisk;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

struct Tuple {
  double r, v, e, alpha;
};

Tuple random_tuple(std::mt19937_64& g) {
  const double alpha = testutil::uniform(g, 0.005, 0.2);
  const double v = -testutil::uniform(g, 0.05, 5.0);
  const double e = v - testutil::uniform(g, 0.01, 3.0);
  const double r = testutil::uniform(g, -8.0, 4.0);
  return {r, v, e, alpha};
}

double fd(const std::function<double(double)>& f, double x, double h = 1e-6) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("EM score examples", "[em]") {
  CHECK_THAT(em_score(1.0, 0.0, 0.05), WithinAbs(0.05, 1e-15));
  CHECK(em_score(-0.3, -0.3, 0.05) == 0.0);
  CHECK(em_score(2.0, 2.0, 0.7) == 0.0);
  CHECK_THAT(em_score(-2.0, -1.0, 0.05), WithinAbs(0.95, 1e-15));
  CHECK_THROWS_AS(em_score(0.0, 0.0, 0.0), ValidationError);
  CHECK_THROWS_AS(em_score(0.0, 0.0, 1.0), ValidationError);
  auto& g = testutil::rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tuple(g);
    CHECK(em_score(t.r, t.v, t.alpha) >= 0.0);
  }
}

TEST_CASE("FZ0 score examples", "[fz0]") {
  CHECK_THAT(fz0_score(-1.0, {-1.0, -1.0, 0.05}), WithinAbs(0.0, 1e-15));
  CHECK_THAT(fz0_score(0.0, {-1.0, -1.0, 0.05}), WithinAbs(0.0, 1e-15));
  CHECK_THROWS_AS(fz0_score(0.0, {-1.0, 0.0, 0.05}), ValidationError);
  CHECK_THROWS_AS(fz0_score(0.0, {-1.0, 0.5, 0.05}), ValidationError);
  auto& g = testutil::rng(2);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_tuple(g);
    const double c = testutil::uniform(g, 0.1, 10.0);
    const double s1 = fz0_score(t.r, {t.v, t.e, t.alpha});
    const double s2 = fz0_score(c * t.r, {c * t.v, c * t.e, t.alpha});
    CHECK_THAT(s2 - s1, WithinAbs(std::log(c), 1e-11));
  }
}

TEST_CASE("ALS score examples", "[als]") {
  CHECK_THAT(als_score(-1.0, {-1.0, -1.0, 0.05}), WithinAbs(0.051293, 1e-6));
  CHECK_THAT(als_score(-1.0, {-1.0, -1.0, 0.05}), WithinAbs(1.0 - std::log(0.95) - 1.0, 1e-15));
  CHECK_THAT(als_score(0.0, {-1.0, -1.0, 0.05}), WithinAbs(1.051293, 1e-6));
  CHECK_THROWS_AS(als_score(0.0, {-1.0, 0.0, 0.05}), ValidationError);
  auto& g = testutil::rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto t = random_tuple(g);
    const double d = als_score(0.0, {t.v, t.e, t.alpha}) - fz0_score(0.0, {t.v, t.e, t.alpha});
    CHECK_THAT(d, WithinAbs(1.0 - std::log(1.0 - t.alpha), 1e-12));
  }
}

TEST_CASE("ALS and FZ0 identity over random tuples", "[als][fz0][property]") {
  auto& g = testutil::rng(4);
  double worst = 0.0, worst_full = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const auto t = random_tuple(g);
    const RiskPair p{t.v, t.e, t.alpha};
    const double lhs = als_score(t.r, p) - fz0_score(t.r, p);
    const double rhs = 1.0 - std::log(1.0 - t.alpha) - t.r / t.e;
    worst = std::max(worst, std::abs(lhs - rhs));
    // The full asymmetric-Laplace score is FZ0 plus a constant.
    worst_full = std::max(worst_full, std::abs(al_full_score(t.r, p) - fz0_score(t.r, p) - (1.0 - std::log(1.0 - t.alpha))));
  }
  CHECK(worst < 1e-12);
  CHECK(worst_full < 1e-12);
}

TEST_CASE("score gradients", "[gradient]") {
  SECTION("example") {
    const auto gr = score_gradient(0.0, {-1.0, -1.0, 0.05}, Loss::FZ0);
    CHECK_THAT(gr.dv, WithinAbs(-1.0, 1e-15));
    CHECK_THAT(gr.de, WithinAbs(0.0, 1e-15));
    const double h = 1e-6;
    CHECK_THAT(gr.dv, WithinAbs((fz0_score(0.0, {-1.0 + h, -1.0, 0.05}) - fz0_score(0.0, {-1.0 - h, -1.0, 0.05})) / (2 * h), 1e-8));
    CHECK_THAT(gr.de, WithinAbs((fz0_score(0.0, {-1.0, -1.0 + h, 0.05}) - fz0_score(0.0, {-1.0, -1.0 - h, 0.05})) / (2 * h), 1e-8));
  }
  SECTION("identities between ALS and FZ0") {
    auto& g = testutil::rng(5);
    for (int i = 0; i < 2000; ++i) {
      const auto t = random_tuple(g);
      const auto a = score_gradient(Loss::ALS, t.r, t.v, t.e, t.alpha);
      const auto f = score_gradient(Loss::FZ0, t.r, t.v, t.e, t.alpha);
      CHECK(a.dv == f.dv);
      CHECK_THAT(a.de - f.de, WithinAbs(t.r / (t.e * t.e), 1e-12 * (1.0 + std::abs(t.r / (t.e * t.e)))));
    }
  }
  SECTION("central finite differences away from the kink") {
    auto& g = testutil::rng(6);
    int checked = 0;
    double worst = 0.0;
    for (int i = 0; i < 5000; ++i) {
      const auto t = random_tuple(g);
      if (std::abs(t.r - t.v) < 1e-3) continue;
      for (auto loss : {Loss::ALS, Loss::FZ0, Loss::EM}) {
        const auto gr = score_gradient(loss, t.r, t.v, t.e, t.alpha);
        const double nv = fd([&](double v) { return score(loss, t.r, v, t.e, t.alpha); }, t.v);
        worst = std::max(worst, testutil::rel_err(gr.dv, nv));
        if (loss != Loss::EM) {
          const double ne = fd([&](double e) { return score(loss, t.r, t.v, e, t.alpha); }, t.e);
          worst = std::max(worst, testutil::rel_err(gr.de, ne));
        }
      }
      ++checked;
    }
    CHECK(checked > 4000);
    CHECK(worst < 1e-5);
  }
  SECTION("kink takes the hit branch") {
    const auto gr = score_gradient(Loss::FZ0, -1.0, -1.0, -2.0, 0.1);
    CHECK_THAT(gr.dv, WithinAbs(0.5 * (1.0 / 0.1 - 1.0), 1e-14));
  }
  CHECK_THROWS_AS(score_gradient(Loss::FZ0, 0.0, -1.0, 0.1, 0.05), ValidationError);
}

TEST_CASE("aggregate score", "[aggregate]") {
  const std::vector<double> s{0.0, 1.0};
  CHECK(aggregate_score(s) == 0.5);
  CHECK_THROWS_AS(aggregate_score(s, 2), ValidationError);
  auto& g = testutil::rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 50 + rep * 10;
    std::vector<double> r(n), v(n), e(n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto tp = random_tuple(g);
      r[t] = tp.r;
      v[t] = tp.v;
      e[t] = tp.e;
    }
    for (auto loss : {Loss::EM, Loss::ALS, Loss::FZ0}) {
      long double acc = 0.0L;
      for (std::size_t t = 5; t < n; ++t) acc += score(loss, r[t], v[t], e[t], 0.05);
      const double expect = static_cast<double>(acc / static_cast<long double>(n - 5));
      CHECK_THAT(aggregate_score(r, v, e, loss, 0.05, 5), WithinRel(expect, 1e-12));
    }
  }
  const std::vector<double> r{0.1, 0.2}, v{-0.1};
  CHECK_THROWS_AS(aggregate_score(r, v, {}, Loss::EM, 0.05), ValidationError);
}

TEST_CASE("EM aggregate is minimized at the empirical quantile", "[em][property]") {
  auto& g = testutil::rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const auto r = testutil::normals(g, 101 + rep);
    const double alpha = 0.05;
    std::vector<double> sorted = r;
    std::sort(sorted.begin(), sorted.end());
    auto total = [&](double v) {
      double s = 0.0;
      for (double x : r) s += em_score(x, v, alpha);
      return s;
    };
    const double q = empirical_quantile(r, alpha);
    const double best = total(q);
    // The sum is piecewise linear with kinks at the data; checking every data point
    // and the midpoints between them covers all candidate minima.
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      CHECK(best <= total(sorted[i]) + 1e-12);
      if (i + 1 < sorted.size()) CHECK(best <= total(0.5 * (sorted[i] + sorted[i + 1])) + 1e-12);
    }
  }
}

TEST_CASE("joint scores are strictly consistent for the normal", "[consistency][property]") {
  auto& g = testutil::rng(9);
  const auto r = testutil::normals(g, 100000);
  const double alpha = 0.05;
  // Standard normal quantile and tail mean at 5%.
  const double v = -1.6448536269514722;
  const double e = -std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi) / alpha;
  auto mean_score = [&](Loss loss, double vv, double ee) {
    CompensatedSum s;
    for (double x : r) s.add(score(loss, x, vv, ee, alpha));
    return s.value() / static_cast<double>(r.size());
  };
  for (auto loss : {Loss::ALS, Loss::FZ0}) {
    const double at_truth = mean_score(loss, v, e);
    for (int k = 0; k < 50; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / 50.0;
      const double size = 0.05 + 0.1 * (k % 5);
      double vv = v * (1.0 + size * std::cos(angle));
      double ee = e * (1.0 + size * std::sin(angle));
      if (!(ee < vv)) ee = vv * 1.05;
      CHECK(at_truth < mean_score(loss, vv, ee));
    }
  }
}

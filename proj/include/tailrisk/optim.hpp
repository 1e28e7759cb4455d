#pragma once

// Local optimizers used by the multi-start estimator: Nelder-Mead simplex and
// BFGS with a backtracking Armijo line search.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

namespace tailrisk::optim {

/// Objective value at x; fills *grad when grad is non-null (BFGS only).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct Options {
  std::size_t max_iter = 500;
  double f_tol = 1e-8;  // relative objective tolerance
  double x_tol = 1e-6;  // parameter tolerance
};

struct Result {
  Eigen::VectorXd x;
  double f = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
};

inline bool rel_close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// Nelder-Mead simplex with standard coefficients. `scale` gives the initial
/// step per coordinate; zero entries fall back to 5% of |x| (or 2.5e-4).
inline Result nelder_mead(const Objective& f, Eigen::VectorXd x0, const Eigen::VectorXd& scale,
                          const Options& opt = {}) {
  const Eigen::Index n = x0.size();
  Result res;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++res.evaluations;
    const double v = f(x, nullptr);
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
  };
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  fv[0] = eval(x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double step = (scale.size() == n && scale[i] > 0.0) ? scale[i] : 0.0;
    if (step == 0.0) step = x0[i] != 0.0 ? 0.05 * std::abs(x0[i]) : 2.5e-4;
    pts[static_cast<std::size_t>(i + 1)][i] += step;
    fv[static_cast<std::size_t>(i + 1)] = eval(pts[static_cast<std::size_t>(i + 1)]);
  }
  std::vector<std::size_t> order(static_cast<std::size_t>(n + 1));
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> f2;
    for (auto k : order) {
      p2.push_back(pts[k]);
      f2.push_back(fv[k]);
    }
    pts.swap(p2);
    fv.swap(f2);
  };
  sort_simplex();
  const auto last = static_cast<std::size_t>(n);
  for (; res.iterations < opt.max_iter; ++res.iterations) {
    double diam = 0.0;
    for (std::size_t k = 1; k <= last; ++k) {
      diam = std::max(diam, ((pts[k] - pts[0]).array().abs() / (1.0 + pts[0].array().abs())).maxCoeff());
    }
    if (rel_close(fv[last], fv[0], opt.f_tol) && diam <= opt.x_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < last; ++k) centroid += pts[k];
    centroid /= static_cast<double>(n);
    const Eigen::VectorXd xr = centroid + (centroid - pts[last]);
    const double fr = eval(xr);
    if (fr < fv[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[last]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[last] = xe;
        fv[last] = fe;
      } else {
        pts[last] = xr;
        fv[last] = fr;
      }
    } else if (fr < fv[last - 1]) {
      pts[last] = xr;
      fv[last] = fr;
    } else {
      const bool outside = fr < fv[last];
      const Eigen::VectorXd xc =
          outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid)) : Eigen::VectorXd(centroid + 0.5 * (pts[last] - centroid));
      const double fc = eval(xc);
      if (fc < (outside ? fr : fv[last])) {
        pts[last] = xc;
        fv[last] = fc;
      } else {
        for (std::size_t k = 1; k <= last; ++k) {
          pts[k] = pts[0] + 0.5 * (pts[k] - pts[0]);
          fv[k] = eval(pts[k]);
        }
      }
    }
    sort_simplex();
  }
  res.x = pts[0];
  res.f = fv[0];
  return res;
}

/// BFGS on the inverse Hessian. Points where the objective is non-finite or
/// above `reject_above` are treated as failed line-search trials.
inline Result bfgs(const Objective& f, Eigen::VectorXd x0, const Options& opt = {},
                   double reject_above = std::numeric_limits<double>::max()) {
  const Eigen::Index n = x0.size();
  Result res;
  Eigen::VectorXd g(n), g_new(n);
  res.x = x0;
  res.f = f(x0, &g);
  ++res.evaluations;
  if (!std::isfinite(res.f) || res.f >= reject_above || !g.allFinite()) return res;
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  // Initial inverse-Hessian scale from the gradient magnitude.
  const double gnorm0 = g.norm();
  if (gnorm0 > 0.0) H *= std::min(1.0, 0.1 * (1.0 + res.x.norm()) / gnorm0);
  for (; res.iterations < opt.max_iter; ++res.iterations) {
    if (g.lpNorm<Eigen::Infinity>() <= 1e-12) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -H * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      H.setIdentity();
      dir = -g;
      slope = g.dot(dir);
    }
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int k = 0; k < 40; ++k) {
      x_new = res.x + step * dir;
      f_new = f(x_new, &g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new < reject_above && g_new.allFinite() &&
          f_new <= res.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double f_old = res.f;
    res.x = x_new;
    res.f = f_new;
    g = g_new;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    const double dx = (s.array().abs() / (1.0 + res.x.array().abs())).maxCoeff();
    if (rel_close(f_old, res.f, opt.f_tol) && dx <= opt.x_tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace tailrisk::optim

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "smsn/errors.hpp"
#include "smsn/linalg.hpp"

namespace smsn {

/// Golden-section maximum of a unimodal scalar function on [lo, hi].
inline double golden_section_max(const std::function<double(double)>& f, double lo, double hi,
                                 double tol = 1e-8, int max_iters = 200) {
  constexpr double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iters && (b - a) > tol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

struct NelderMeadResult {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Derivative-free minimization (Nelder-Mead simplex with standard
/// reflection/expansion/contraction coefficients).
inline NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f,
                                    const VectorXd& x0, double initial_step = 0.5,
                                    double tol = 1e-10, int max_iters = 5000) {
  const int n = static_cast<int>(x0.size());
  if (n < 1) throw invalid_parameter("nelder_mead needs at least one dimension");

  std::vector<VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int k = 1; k <= n; ++k) xs[k][k - 1] += initial_step * std::max(1.0, std::abs(x0[k - 1]));
  for (int k = 0; k <= n; ++k) fs[k] = f(xs[k]);

  std::vector<int> order(n + 1);
  NelderMeadResult res;
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
    const int best = order[0], worst = order[n], second = order[n - 1];
    if (std::abs(fs[worst] - fs[best]) <=
        tol * (1.0 + std::abs(fs[best]) + std::abs(fs[worst]))) {
      res.converged = true;
      break;
    }

    VectorXd centroid = VectorXd::Zero(n);
    for (int k = 0; k <= n; ++k)
      if (k != worst) centroid += xs[k];
    centroid /= n;

    const VectorXd xr = centroid + (centroid - xs[worst]);
    const double fr = f(xr);
    if (fr < fs[best]) {
      const VectorXd xe = centroid + 2.0 * (centroid - xs[worst]);
      const double fe = f(xe);
      if (fe < fr) {
        xs[worst] = xe;
        fs[worst] = fe;
      } else {
        xs[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      xs[worst] = xr;
      fs[worst] = fr;
    } else {
      const VectorXd xc = centroid + 0.5 * (xs[worst] - centroid);
      const double fc = f(xc);
      if (fc < fs[worst]) {
        xs[worst] = xc;
        fs[worst] = fc;
      } else {
        for (int k = 0; k <= n; ++k) {
          if (k == best) continue;
          xs[k] = xs[best] + 0.5 * (xs[k] - xs[best]);
          fs[k] = f(xs[k]);
        }
      }
    }
  }

  const auto it = std::min_element(fs.begin(), fs.end());
  res.value = *it;
  res.x = xs[static_cast<int>(it - fs.begin())];
  return res;
}

}  // namespace smsn

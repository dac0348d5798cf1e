#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "smsn/errors.hpp"

namespace smsn {

namespace detail {

/// Golden-section maximum of a unimodal function on [lo, hi].
template <class F>
double golden_max(F&& f, double lo, double hi, int iters = 120) {
  constexpr double invphi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < iters && (b - a) > 1e-12 * (1.0 + std::abs(a) + std::abs(b)); ++it) {
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

}  // namespace detail

/// log of \int_0^{hi} exp(logf(u)) du.
///
/// Works in s = log u, where the Jacobian turns integrable endpoint
/// singularities like u^{nu/2 - 1} into smooth exponential decay, then splits
/// adaptive Gauss-Kronrod at the mode of the rescaled integrand so that
/// magnitudes of order exp(+-1000) never leave the log domain.
template <class F>
double log_integral_positive(F&& logf, double hi, double rel_tol = 1e-10) {
  const double s_hi = std::isfinite(hi) ? std::log(hi) : 46.0;
  auto g = [&](double s) {
    const double u = std::exp(s);
    // exp(s) underflowed: the Jacobian factor e^s has already driven the
    // integrand to zero for any convergent integral.
    if (u <= 0.0) return -std::numeric_limits<double>::infinity();
    return logf(u) + s;
  };
  const double s_star = detail::golden_max(g, -46.0, s_hi);
  const double l_star = g(s_star);
  if (!std::isfinite(l_star)) {
    if (l_star < 0.0) return -std::numeric_limits<double>::infinity();
    throw numerical_error("mixing integrand is not finite at its mode");
  }

  auto scaled = [&](double s) {
    const double l = g(s) - l_star;
    return l > -746.0 ? std::exp(l) : 0.0;
  };

  const double inf = std::numeric_limits<double>::infinity();
  using gk = boost::math::quadrature::gauss_kronrod<double, 15>;
  double err1 = 0.0, err2 = 0.0;
  const double i1 = gk::integrate(scaled, -inf, s_star, 15, rel_tol, &err1);
  const double i2 =
      gk::integrate(scaled, s_star, std::isfinite(hi) ? s_hi : inf, 15, rel_tol, &err2);
  const double total = i1 + i2;
  if (!(total > 0.0) || !std::isfinite(total))
    throw numerical_error("mixing integral is not positive and finite");
  if (err1 + err2 > 1e-6 * total)
    throw numerical_error("mixing quadrature did not converge");
  return l_star + std::log(total);
}

}  // namespace smsn

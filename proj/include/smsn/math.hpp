#pragma once

#include <cmath>
#include <limits>

namespace smsn {

inline constexpr double kLogTwo = 0.69314718055994530942;
inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kSqrtTwoOverPi = 0.79788456080286535588;  // sqrt(2/pi)

inline double log_norm_pdf(double x) { return -0.5 * x * x - 0.5 * kLogTwoPi; }

inline double norm_pdf(double x) { return std::exp(log_norm_pdf(x)); }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

/// log Phi(x), finite for all finite x. Direct erfc down to where it would
/// underflow, asymptotic Mills-ratio expansion beyond.
inline double log_norm_cdf(double x) {
  if (x > -37.0) {
    return std::log(0.5 * std::erfc(-x * M_SQRT1_2));
  }
  const double x2 = x * x;
  // Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - 15/x^6)
  const double corr = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - 0.5 * kLogTwoPi - std::log(-x) + std::log(corr);
}

/// Inverse Mills ratio W(x) = phi(x)/Phi(x).
inline double wphi(double x) { return std::exp(log_norm_pdf(x) - log_norm_cdf(x)); }

inline double logsumexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

/// log of the Student-t density with dof nu at x (standard location/scale).
inline double log_t_pdf(double x, double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * M_PI) - 0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

}  // namespace smsn

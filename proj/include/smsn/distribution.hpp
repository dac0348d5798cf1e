#pragma once

#include <cmath>
#include <optional>

#include "smsn/errors.hpp"
#include "smsn/linalg.hpp"
#include "smsn/math.hpp"
#include "smsn/mixing.hpp"
#include "smsn/quadrature.hpp"
#include "smsn/rng.hpp"

namespace smsn {

/// Parameters of a p-variate SMSN(mu, Sigma, lambda; H) distribution.
///
/// Density: f(y) = 2 \int phi_p(y; mu, u^{-1} Sigma) Phi(u^{1/2} lambda' Sigma^{-1/2} (y - mu)) dH(u).
/// lambda == 0 collapses the family to its symmetric SMN member.
struct SmsnParams {
  VectorXd mu;
  MatrixXd sigma;
  VectorXd lambda;
  MixingLaw mixing = MixingLaw::normal();

  int dim() const { return static_cast<int>(mu.size()); }

  void validate() const {
    const auto p = mu.size();
    if (p == 0) throw shape_error("smsn location must be non-empty");
    if (sigma.rows() != p || sigma.cols() != p)
      throw shape_error("smsn scale matrix has wrong shape");
    if (lambda.size() != p) throw shape_error("smsn skewness vector has wrong length");
    if (!mu.allFinite() || !sigma.allFinite() || !lambda.allFinite())
      throw invalid_parameter("smsn parameters must be finite");
    if (!sigma.isApprox(sigma.transpose(), 1e-10))
      throw invalid_parameter("smsn scale matrix must be symmetric");
    cholesky(sigma, "smsn scale matrix");
  }
};

/// Skew-normal log density 2 phi_p(y; mu, Sigma) Phi(lambda' Sigma^{-1/2} (y - mu)).
inline double sn_logpdf(const VectorXd& y, const VectorXd& mu, const MatrixXd& sigma,
                        const VectorXd& lambda) {
  const int p = static_cast<int>(y.size());
  if (mu.size() != p || sigma.rows() != p || sigma.cols() != p || lambda.size() != p)
    throw shape_error("sn_logpdf dimension mismatch");
  const auto llt = cholesky(sigma, "skew-normal scale matrix");
  const VectorXd e = y - mu;
  const double d = e.dot(llt.solve(e));
  double log_skew = -kLogTwo;
  if (!lambda.isZero(0.0)) {
    const double a = lambda.dot(sym_inv_sqrt(sigma) * e);
    log_skew = log_norm_cdf(a);
  }
  return kLogTwo - 0.5 * p * kLogTwoPi - 0.5 * logdet_from_llt(llt) - 0.5 * d + log_skew;
}

/// Posterior functionals of the mixing factor U given an observation.
///
/// All inputs are reduced to the dimension p, squared Mahalanobis distance d
/// and skew projection A = lambda' Sigma^{-1/2} (y - mu); the posterior
/// density is proportional to u^{p/2} exp(-u d / 2) Phi(u^{1/2} A) h(u).
class MixingPosterior {
 public:
  MixingPosterior(int p, double d, double A, MixingLaw mixing)
      : p_(p), d_(d), A_(A), mixing_(mixing) {
    if (p <= 0) throw shape_error("mixing posterior requires p >= 1");
    if (!(d >= 0.0) || !std::isfinite(A))
      throw invalid_parameter("mixing posterior requires finite d >= 0 and A");
  }

  double dist() const { return d_; }
  double skew_projection() const { return A_; }

  /// log \int u^{p/2} exp(-u d / 2) Phi(u^{1/2} A) dH(u).
  double log_kernel_integral() const {
    if (!log_kernel_) log_kernel_ = log_weighted(0, false, 0.0);
    return *log_kernel_;
  }

  /// kappa = E{U | y}.
  double kappa() const { return std::exp(log_weighted(2, false, 0.0) - log_kernel_integral()); }

  /// tau_r = E{U^{r/2} W_Phi(U^{1/2} a) | y} with W_Phi = phi / Phi.
  double tau(int r, double a) const {
    return std::exp(log_weighted(r, true, a) - log_kernel_integral());
  }

 private:
  // log \int u^{(p+r)/2} e^{-ud/2} Phi(sqrt(u) A) [W_Phi(sqrt(u) a)] dH(u)
  double log_weighted(int r, bool with_wphi, double a) const {
    auto log_f = [&](double u) {
      const double su = std::sqrt(u);
      double l = 0.5 * (p_ + r) * std::log(u) - 0.5 * d_ * u + log_norm_cdf(su * A_);
      if (with_wphi) l += log_norm_pdf(su * a) - log_norm_cdf(su * a);
      return l;
    };
    if (mixing_.discrete()) {
      double acc = -std::numeric_limits<double>::infinity();
      for (const auto& [u, lw] : mixing_.atoms()) acc = logsumexp(acc, lw + log_f(u));
      return acc;
    }
    return log_integral_positive([&](double u) { return log_f(u) + mixing_.log_density(u); },
                                 mixing_.upper_support());
  }

  int p_;
  double d_;
  double A_;
  MixingLaw mixing_;
  mutable std::optional<double> log_kernel_;
};

/// Reduce an observation to its mixing posterior under the given parameters.
inline MixingPosterior make_posterior(const VectorXd& y, const SmsnParams& par) {
  const int p = par.dim();
  if (y.size() != p) throw shape_error("observation dimension mismatch");
  const auto llt = cholesky(par.sigma, "smsn scale matrix");
  const VectorXd e = y - par.mu;
  const double d = e.dot(llt.solve(e));
  double A = 0.0;
  if (!par.lambda.isZero(0.0)) A = par.lambda.dot(sym_inv_sqrt(par.sigma) * e);
  return MixingPosterior(p, d, A, par.mixing);
}

/// Marginal SMSN log density of a single p-vector.
inline double smsn_logpdf(const VectorXd& y, const SmsnParams& par) {
  const int p = par.dim();
  const auto llt = cholesky(par.sigma, "smsn scale matrix");
  const MixingPosterior post = make_posterior(y, par);
  return kLogTwo - 0.5 * p * kLogTwoPi - 0.5 * logdet_from_llt(llt) +
         post.log_kernel_integral();
}

/// Conditional weights entering the robust estimating equations.
struct ConditionalWeights {
  double kappa;   ///< E{U | y}
  double tau_m1;  ///< E{U^{-1/2} W_Phi(U^{1/2} A) | y}
};

inline ConditionalWeights conditional_weights(const VectorXd& y, const SmsnParams& par) {
  const MixingPosterior post = make_posterior(y, par);
  return {post.kappa(), post.tau(-1, post.skew_projection())};
}

/// Draw n rows from SMSN(mu, Sigma, lambda; H).
///
/// Uses the convolution form: Z = delta |t| + (I - delta delta')^{1/2} w with
/// delta = lambda / sqrt(1 + lambda' lambda), then y = mu + u^{-1/2} Sigma^{1/2} Z.
inline MatrixXd sample_smsn(const SmsnParams& par, int n, RngEngine& rng) {
  if (n < 0) throw invalid_parameter("sample count must be >= 0");
  par.validate();
  const int p = par.dim();
  const VectorXd delta = par.lambda / std::sqrt(1.0 + par.lambda.squaredNorm());
  const double rho = delta.squaredNorm();
  MatrixXd half = MatrixXd::Identity(p, p);
  if (rho > 0.0) half -= ((1.0 - std::sqrt(1.0 - rho)) / rho) * (delta * delta.transpose());
  const MatrixXd sigma_half = sym_sqrt(par.sigma);

  std::normal_distribution<double> gauss(0.0, 1.0);
  MatrixXd out(n, p);
  VectorXd w(p);
  for (int i = 0; i < n; ++i) {
    const double u = par.mixing.sample(rng);
    const double t0 = std::abs(gauss(rng));
    for (int j = 0; j < p; ++j) w[j] = gauss(rng);
    const VectorXd z = delta * t0 + half * w;
    out.row(i) = (par.mu + sigma_half * z / std::sqrt(u)).transpose();
  }
  return out;
}

}  // namespace smsn

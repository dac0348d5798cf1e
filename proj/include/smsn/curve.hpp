#pragma once

#include <cmath>

#include "smsn/errors.hpp"
#include "smsn/linalg.hpp"
#include "smsn/math.hpp"

namespace smsn {

/// Per-subject curve parameters on the natural scale, all strictly positive:
/// alpha2 and alpha3 carry the subject's random effects through
/// alpha_{2i} = exp(beta2 + b_{1i}), alpha_{3i} = exp(beta3 + b_{2i}).
struct CurveParams {
  double alpha1;
  double alpha2;
  double alpha3;
  double alpha4;

  void validate() const {
    if (!(alpha1 > 0.0) || !(alpha2 > 0.0) || !(alpha3 > 0.0) || !(alpha4 > 0.0) ||
        !std::isfinite(alpha1) || !std::isfinite(alpha2) || !std::isfinite(alpha3) ||
        !std::isfinite(alpha4))
      throw invalid_parameter("curve parameters must be positive and finite");
  }
};

/// Nonlinear mean function eta(t; beta, b) with design rows
/// w(t) = d eta / d beta' and h(t) = d eta / d b'.
///
/// The default gradient is a central finite difference, so any curve with just
/// an eta() can be plugged into the estimation machinery.
class CurveModel {
 public:
  virtual ~CurveModel() = default;

  virtual int n_fixed() const = 0;
  virtual int n_random() const = 0;

  virtual double eta(double t, const VectorXd& beta, const VectorXd& b) const = 0;

  virtual void gradients(double t, const VectorXd& beta, const VectorXd& b,
                         Eigen::RowVectorXd& w_row, Eigen::RowVectorXd& h_row) const {
    w_row.resize(n_fixed());
    h_row.resize(n_random());
    const double step = 1e-6;
    VectorXd bb = beta;
    for (int k = 0; k < n_fixed(); ++k) {
      const double h0 = step * std::max(1.0, std::abs(beta[k]));
      bb[k] = beta[k] + h0;
      const double up = eta(t, bb, b);
      bb[k] = beta[k] - h0;
      const double dn = eta(t, bb, b);
      bb[k] = beta[k];
      w_row[k] = (up - dn) / (2.0 * h0);
    }
    VectorXd br = b;
    for (int k = 0; k < n_random(); ++k) {
      const double h0 = step * std::max(1.0, std::abs(b[k]));
      br[k] = b[k] + h0;
      const double up = eta(t, beta, br);
      br[k] = b[k] - h0;
      const double dn = eta(t, beta, br);
      br[k] = b[k];
      h_row[k] = (up - dn) / (2.0 * h0);
    }
  }

  VectorXd eta_vec(const VectorXd& t, const VectorXd& beta, const VectorXd& b) const {
    VectorXd out(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) out[i] = eta(t[i], beta, b);
    return out;
  }

  /// Stacks gradient rows into the design matrices W (n x p) and H (n x q).
  void design(const VectorXd& t, const VectorXd& beta, const VectorXd& b, MatrixXd& W,
              MatrixXd& H) const {
    W.resize(t.size(), n_fixed());
    H.resize(t.size(), n_random());
    Eigen::RowVectorXd w_row(n_fixed()), h_row(n_random());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      gradients(t[i], beta, b, w_row, h_row);
      W.row(i) = w_row;
      H.row(i) = h_row;
    }
  }
};

/// Derivative of the generalized logistic model,
///   eta(t) = alpha1 alpha3 alpha4 e^{-alpha3 t} / (alpha2 + e^{-alpha3 t})^{alpha4 + 1},
/// with beta = (beta1..beta4) on the log scale and random effects
/// b = (b1, b2) shifting beta2 and beta3. Evaluated in the log domain so that
/// large |alpha3 t| cannot overflow.
class GeneralizedLogisticCurve final : public CurveModel {
 public:
  int n_fixed() const override { return 4; }
  int n_random() const override { return 2; }

  static CurveParams params(const VectorXd& beta, const VectorXd& b) {
    if (beta.size() != 4) throw shape_error("beta must have length 4");
    if (b.size() != 2) throw shape_error("b must have length 2");
    return CurveParams{std::exp(beta[0]), std::exp(beta[1] + b[0]), std::exp(beta[2] + b[1]),
                       std::exp(beta[3])};
  }

  static double log_eta(double t, const VectorXd& beta, const VectorXd& b) {
    const double log_a2 = beta[1] + b[0];
    const double log_a3 = beta[2] + b[1];
    const double a3 = std::exp(log_a3);
    const double a4 = std::exp(beta[3]);
    const double m = -a3 * t;
    const double L = logsumexp(log_a2, m);
    return beta[0] + log_a3 + beta[3] + m - (a4 + 1.0) * L;
  }

  double eta(double t, const VectorXd& beta, const VectorXd& b) const override {
    if (beta.size() != 4 || b.size() != 2) throw shape_error("curve parameter dimensions");
    if (!std::isfinite(t)) throw invalid_parameter("t must be finite");
    return std::exp(log_eta(t, beta, b));
  }

  void gradients(double t, const VectorXd& beta, const VectorXd& b,
                 Eigen::RowVectorXd& w_row, Eigen::RowVectorXd& h_row) const override {
    if (beta.size() != 4 || b.size() != 2) throw shape_error("curve parameter dimensions");
    const double log_a2 = beta[1] + b[0];
    const double log_a3 = beta[2] + b[1];
    const double a3 = std::exp(log_a3);
    const double a4 = std::exp(beta[3]);
    const double m = -a3 * t;
    const double L = logsumexp(log_a2, m);
    const double value = std::exp(beta[0] + log_a3 + beta[3] + m - (a4 + 1.0) * L);

    const double p2 = std::exp(log_a2 - L);
    const double p3 = std::exp(m - L);
    const double d_log_a2 = -(a4 + 1.0) * p2;
    const double d_log_a3 = 1.0 + m * (1.0 - (a4 + 1.0) * p3);
    const double d_beta4 = 1.0 - a4 * L;

    w_row.resize(4);
    h_row.resize(2);
    w_row << value, value * d_log_a2, value * d_log_a3, value * d_beta4;
    h_row << value * d_log_a2, value * d_log_a3;
  }
};

/// Unique stationary point of eta, in days since the subject's first death.
inline double peak_time(const CurveParams& p) {
  p.validate();
  return std::log(p.alpha4 / p.alpha2) / p.alpha3;
}

/// Closed-form integral of eta over (-inf, t].
inline double cumulative(double t, const CurveParams& p) {
  p.validate();
  const double L = logsumexp(std::log(p.alpha2), -p.alpha3 * t);
  return std::exp(std::log(p.alpha1) - p.alpha4 * L);
}

/// lim_{t->inf} cumulative(t) = alpha1 / alpha2^{alpha4}.
inline double total_asymptote(const CurveParams& p) {
  p.validate();
  return std::exp(std::log(p.alpha1) - p.alpha4 * std::log(p.alpha2));
}

}  // namespace smsn

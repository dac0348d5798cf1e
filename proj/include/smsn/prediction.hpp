#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "smsn/estimation.hpp"

namespace smsn {

/// Blocks of the joint dispersion of (observed, future) for one subject,
/// expanded around the subject's empirical Bayes estimate, plus the derived
/// conditional quantities entering the minimum-MSE predictor.
///
/// The skew projection of the stacked vector is built by applying the
/// marginal skewness construction to the stacked design (H; H+) and stacked
/// dispersion, which is the unique choice that keeps the predictor
/// dimensionally coherent.
struct PredictPartition {
  MatrixXd H_plus;
  MatrixXd psi_star_11;
  MatrixXd psi_star_12;
  MatrixXd psi_star_21;
  MatrixXd psi_star_22;
  MatrixXd psi_22_1;
  VectorXd mu_21;
  VectorXd upsilon1;
  VectorXd upsilon2;
  VectorXd upsilon_tilde;
  double tau_m1 = 0.0;
};

namespace detail_pred {

inline std::size_t subject_index(const FitResult& fit, const std::string& subject) {
  for (std::size_t i = 0; i < fit.panel.subjects.size(); ++i)
    if (fit.panel.subjects[i].name == subject) return i;
  throw invalid_parameter("unknown subject '" + subject + "'");
}

}  // namespace detail_pred

/// Builds the conditional partition for predicting a subject at future_times.
/// Does not require the times to lie beyond the observed window; the public
/// predictor enforces that separately so the in-sample collapse stays
/// testable.
inline PredictPartition predict_partition(const FitResult& fit, const CurveModel& curve,
                                          const std::string& subject,
                                          const VectorXd& future_times) {
  const std::size_t idx = detail_pred::subject_index(fit, subject);
  const Subject& s = fit.panel.subjects[idx];
  const Theta& theta = fit.theta;
  const VectorXd& b = fit.b_hat[idx];
  const Eigen::Index n = s.t.size();
  const Eigen::Index v = future_times.size();
  const int q = theta.q();

  MatrixXd W, H, Wp, Hp;
  curve.design(s.t, theta.beta, b, W, H);
  curve.design(future_times, theta.beta, b, Wp, Hp);

  PredictPartition part;
  part.H_plus = Hp;
  part.psi_star_11 = H * theta.D * H.transpose();
  part.psi_star_11.diagonal().array() += theta.sigma2;
  part.psi_star_21 = Hp * theta.D * H.transpose();
  part.psi_star_12 = part.psi_star_21.transpose();
  part.psi_star_22 = Hp * theta.D * Hp.transpose();
  part.psi_star_22.diagonal().array() += theta.sigma2;

  Eigen::LLT<MatrixXd> llt11(part.psi_star_11);
  if (llt11.info() != Eigen::Success)
    throw numerical_error("subject '" + subject + "': observed dispersion is not positive definite");
  part.psi_22_1 = part.psi_star_22 - part.psi_star_21 * llt11.solve(part.psi_star_12);

  const double c = theta.c();
  const VectorXd delta = theta.shape();
  const VectorXd e_c = s.y - curve.eta_vec(s.t, theta.beta, b) + H * (b - c * delta);

  part.mu_21 = curve.eta_vec(future_times, theta.beta, b) - Hp * (b - c * delta) +
               part.psi_star_21 * llt11.solve(e_c);

  part.upsilon1 = VectorXd::Zero(n);
  part.upsilon2 = VectorXd::Zero(v);
  double a_in = 0.0;
  if (theta.skew && !theta.lambda.isZero(0.0)) {
    const VectorXd zeta = theta.zeta();
    const MatrixXd dinv =
        cholesky(theta.D, "D").solve(MatrixXd::Identity(q, q));

    MatrixXd h_star(n + v, q);
    h_star.topRows(n) = H;
    h_star.bottomRows(v) = Hp;
    MatrixXd psi_star(n + v, n + v);
    psi_star.topLeftCorner(n, n) = part.psi_star_11;
    psi_star.topRightCorner(n, v) = part.psi_star_12;
    psi_star.bottomLeftCorner(v, n) = part.psi_star_21;
    psi_star.bottomRightCorner(v, v) = part.psi_star_22;

    const MatrixXd lam_star_inv = dinv + h_star.transpose() * h_star / theta.sigma2;
    const double zlz = zeta.dot(cholesky(lam_star_inv, "Lambda*").solve(zeta));
    Eigen::LLT<MatrixXd> llt_star(psi_star);
    if (llt_star.info() != Eigen::Success)
      throw numerical_error("subject '" + subject + "': joint dispersion is not positive definite");
    const VectorXd ups = llt_star.solve(h_star * (theta.D * zeta)) / std::sqrt(1.0 + zlz);
    part.upsilon1 = ups.head(n);
    part.upsilon2 = ups.tail(v);

    const MatrixXd lam_in_inv = dinv + H.transpose() * H / theta.sigma2;
    const double zlz_in = zeta.dot(cholesky(lam_in_inv, "Lambda").solve(zeta));
    const VectorXd ups_in = llt11.solve(H * (theta.D * zeta)) / std::sqrt(1.0 + zlz_in);
    a_in = ups_in.dot(e_c);
  }

  const double w2 = part.upsilon2.dot(part.psi_22_1 * part.upsilon2);
  part.upsilon_tilde =
      (part.upsilon1 + llt11.solve(part.psi_star_12 * part.upsilon2)) / std::sqrt(1.0 + w2);

  const double d_in = std::max(0.0, e_c.dot(llt11.solve(e_c)));
  const MixingPosterior post(static_cast<int>(n), d_in, a_in, theta.mixing);
  part.tau_m1 = post.tau(-1, part.upsilon_tilde.dot(e_c));
  return part;
}

/// mu_21 plus the skew correction; the symmetric families collapse to the
/// Gaussian conditional mean because upsilon2 vanishes.
inline VectorXd predict_from_partition(const PredictPartition& part) {
  const double w2 = part.upsilon2.dot(part.psi_22_1 * part.upsilon2);
  return part.mu_21 +
         (part.psi_22_1 * part.upsilon2) * (part.tau_m1 / std::sqrt(1.0 + w2));
}

/// Point forecasts on the model (scaled) and original response scales. The
/// raw values are not clamped here; clamping of negative daily predictions is
/// a reporting-layer concern.
struct Forecast {
  VectorXd times;
  VectorXd scaled;
  VectorXd raw;
};

inline Forecast predict_future(const FitResult& fit, const CurveModel& curve,
                               const std::string& subject, const VectorXd& future_times) {
  const std::size_t idx = detail_pred::subject_index(fit, subject);
  const Subject& s = fit.panel.subjects[idx];

  Forecast out;
  out.times = future_times;
  if (future_times.size() == 0) {
    out.scaled.resize(0);
    out.raw.resize(0);
    return out;
  }
  const double t_last = s.t[s.t.size() - 1];
  for (Eigen::Index j = 0; j < future_times.size(); ++j) {
    if (!(future_times[j] > t_last))
      throw invalid_parameter("subject '" + subject +
                              "': future times must lie strictly after the last observation");
  }
  const PredictPartition part = predict_partition(fit, curve, subject, future_times);
  out.scaled = predict_from_partition(part);
  out.raw = out.scaled * fit.panel.k_z;
  return out;
}

/// Cumulative death totals on the original scale: the observed total plus
/// predicted daily values through each horizon date. Negative daily
/// predictions are clamped to zero here, which makes the totals nondecreasing
/// in the horizon.
struct CumulativeForecast {
  std::vector<Date> dates;
  VectorXd totals;
  double observed_total = 0.0;
};

inline CumulativeForecast cumulative_forecast(const FitResult& fit, const CurveModel& curve,
                                              const std::string& subject,
                                              const std::vector<Date>& horizon_dates) {
  const std::size_t idx = detail_pred::subject_index(fit, subject);
  const Subject& s = fit.panel.subjects[idx];
  const double t_last = s.t[s.t.size() - 1];
  const Date last_date = s.first_death.plus_days(static_cast<long>(std::llround(t_last)));

  CumulativeForecast out;
  out.dates = horizon_dates;
  out.observed_total = fit.panel.k_z * s.y.sum();
  out.totals.resize(static_cast<Eigen::Index>(horizon_dates.size()));
  if (horizon_dates.empty()) return out;

  long max_ahead = 0;
  for (const Date& d : horizon_dates) {
    const long ahead = last_date.days_until(d);
    if (ahead < 0)
      throw invalid_parameter("subject '" + subject + "': horizon date " + d.iso() +
                              " precedes the last observation " + last_date.iso());
    max_ahead = std::max(max_ahead, ahead);
  }

  VectorXd daily = VectorXd::Zero(max_ahead);
  if (max_ahead > 0) {
    VectorXd times(max_ahead);
    for (long k = 0; k < max_ahead; ++k) times[k] = t_last + double(k + 1);
    const Forecast fc = predict_future(fit, curve, subject, times);
    daily = fc.raw.cwiseMax(0.0);
  }

  for (std::size_t i = 0; i < horizon_dates.size(); ++i) {
    const long ahead = last_date.days_until(horizon_dates[i]);
    out.totals[static_cast<Eigen::Index>(i)] =
        out.observed_total + daily.head(ahead).sum();
  }
  return out;
}

}  // namespace smsn

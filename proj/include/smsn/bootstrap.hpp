#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "smsn/prediction.hpp"
#include "smsn/rng.hpp"

namespace smsn {

struct BootstrapConfig {
  int M = 600;
  double trim_frac = 0.15;
  double alpha = 0.05;
  std::uint64_t seed = 1;
  bool condition_on_u = true;
  int workers = 1;
  long horizon_days = 0;
  std::vector<long> total_horizons;
  FitConfig refit;

  void validate() const {
    if (M < 10) throw invalid_parameter("bootstrap needs M >= 10 replicates");
    if (!(trim_frac >= 0.0) || !(trim_frac < 0.5))
      throw invalid_parameter("trim_frac must lie in [0, 0.5)");
    if (!(alpha > 0.0) || !(alpha < 1.0)) throw invalid_parameter("alpha must lie in (0, 1)");
    if (workers < 1) throw invalid_parameter("workers must be >= 1");
    if (horizon_days < 0) throw invalid_parameter("horizon_days must be >= 0");
    for (long h : total_horizons)
      if (h < 0) throw invalid_parameter("total horizons must be >= 0");
  }
};

/// Survivors of the failure and trim stages: round((M - failures)(1 - trim)).
inline int kept_after_trim(int m_total, int failures, double trim_frac) {
  const int survivors = m_total - failures;
  if (survivors <= 0) return 0;
  return static_cast<int>(std::lround(survivors * (1.0 - trim_frac)));
}

/// Draws one panel from the fitted model over the design's time grids. When
/// u_override supplies per-subject mixing factors, both the random effect and
/// the error term are drawn conditioned on them, preserving each subject's
/// estimated noise level.
inline PreparedPanel simulate_dataset(const Theta& theta, const CurveModel& curve,
                                      const PreparedPanel& design,
                                      const std::vector<double>* u_override, RngEngine& rng) {
  theta.validate();
  if (u_override && u_override->size() != design.subjects.size())
    throw shape_error("u_override must supply one factor per subject");

  const int q = theta.q();
  const VectorXd delta = theta.shape();
  const MatrixXd gam_half = sym_sqrt(theta.gamma_mat());
  const double c = theta.c();

  std::normal_distribution<double> z;
  PreparedPanel out = design;
  for (std::size_t i = 0; i < out.subjects.size(); ++i) {
    Subject& s = out.subjects[i];
    const double u = u_override ? (*u_override)[i] : theta.mixing.sample(rng);
    if (!(u > 0.0) || !std::isfinite(u))
      throw invalid_parameter("mixing factor for subject '" + s.name + "' must be positive");
    const double root_u = std::sqrt(u);
    const double t0 = std::abs(z(rng)) / root_u;
    VectorXd eps(q);
    for (int k = 0; k < q; ++k) eps[k] = z(rng);
    const VectorXd b = c * delta + delta * t0 + gam_half * eps / root_u;
    const double noise_sd = std::sqrt(theta.sigma2) / root_u;
    VectorXd y(s.t.size());
    for (Eigen::Index j = 0; j < s.t.size(); ++j)
      y[j] = curve.eta(s.t[j], theta.beta, b) + noise_sd * z(rng);
    s.y = y;
  }
  return out;
}

/// Percentile band over a per-subject day grid, on the original (raw) scale.
struct BandCurve {
  std::string subject;
  VectorXd t;
  std::vector<Date> dates;
  VectorXd lo;
  VectorXd hi;
};

struct PeakInterval {
  Date lo;
  Date hi;
};

struct HorizonInterval {
  long days_ahead = 0;
  double lo = 0.0;
  double hi = 0.0;
};

struct BootstrapResult {
  int requested = 0;
  int failures = 0;
  int trimmed = 0;
  int kept = 0;
  std::vector<std::string> failure_reasons;
  std::vector<BandCurve> bands;
  std::vector<PeakInterval> peak_intervals;
  std::vector<std::vector<HorizonInterval>> totals_intervals;
};

namespace detail_boot {

/// Linear-interpolation quantile of a sorted sample; monotone in p.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw invalid_parameter("quantile of an empty sample");
  const double h = p * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t j = static_cast<std::size_t>(std::floor(h));
  if (j + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(j);
  return sorted[j] + frac * (sorted[j + 1] - sorted[j]);
}

struct Replicate {
  bool ok = false;
  std::string reason;
  double mse = 0.0;
  // Per subject: raw-scale curve over the band grid, and raw totals per horizon.
  std::vector<VectorXd> curves;
  std::vector<std::vector<double>> totals;
};

}  // namespace detail_boot

/// Peak-date interval from the percentile band: the earliest and latest dates
/// where the upper curve reaches the maximum of the lower curve, so every
/// curve lying inside the band attains its maximum within the interval.
/// Crossings between grid days are located by linear interpolation and
/// rounded to the nearest day.
inline std::pair<Date, Date> peak_interval(const VectorXd& band_lo, const VectorXd& band_hi,
                                           const std::vector<Date>& dates) {
  const Eigen::Index n = band_lo.size();
  if (n == 0 || band_hi.size() != n || static_cast<Eigen::Index>(dates.size()) != n)
    throw shape_error("peak_interval needs equally sized bands and dates");
  const double m = band_lo.maxCoeff();
  if (!std::isfinite(m)) throw invalid_parameter("lower band has no finite maximum");
  if (band_hi.maxCoeff() < m)
    throw invalid_parameter("upper band lies below the lower band's maximum");

  Eigen::Index first = -1, last = -1;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (band_hi[j] >= m) {
      if (first < 0) first = j;
      last = j;
    }
  }

  auto cross_date = [&](Eigen::Index inside, Eigen::Index outside) {
    const double gap = band_hi[inside] - band_hi[outside];
    const double frac = gap > 0.0 ? (band_hi[inside] - m) / gap : 0.0;
    const long offset = std::lround(frac * static_cast<double>(dates[outside].serial() -
                                                               dates[inside].serial()));
    return dates[inside].plus_days(offset);
  };

  Date lo = dates[first];
  if (first > 0) lo = cross_date(first, first - 1);
  Date hi = dates[last];
  if (last + 1 < n) hi = cross_date(last, last + 1);
  return {lo, hi};
}

inline BootstrapResult run_bootstrap(const FitResult& fit, const CurveModel& curve,
                                     const BootstrapConfig& config) {
  config.validate();
  if (!fit.converged) throw invalid_parameter("bootstrap requires a converged fit");
  const Family family = parse_family(fit.family_code);
  const std::size_t n_subj = fit.panel.subjects.size();
  const double k_z = fit.panel.k_z;

  // Common per-subject band grid: the observed days plus the horizon.
  std::vector<VectorXd> grids(n_subj);
  std::vector<VectorXd> future_times(n_subj);
  for (std::size_t i = 0; i < n_subj; ++i) {
    const Subject& s = fit.panel.subjects[i];
    const Eigen::Index n = s.t.size();
    const double t_last = s.t[n - 1];
    grids[i].resize(n + config.horizon_days);
    grids[i].head(n) = s.t;
    future_times[i].resize(config.horizon_days);
    for (long k = 0; k < config.horizon_days; ++k) {
      grids[i][n + k] = t_last + double(k + 1);
      future_times[i][k] = t_last + double(k + 1);
    }
  }

  FitConfig refit_cfg = config.refit;
  refit_cfg.beta_init = fit.theta.beta;
  refit_cfg.sigma2_init = fit.theta.sigma2;
  refit_cfg.D_init = fit.theta.D;
  if (fit.theta.skew) refit_cfg.lambda_init = fit.theta.lambda;
  if (family.n_nu() > 0) {
    VectorXd nu(family.n_nu());
    nu[0] = fit.theta.mixing.nu();
    if (family.n_nu() == 2) nu[1] = fit.theta.mixing.gamma();
    refit_cfg.nu_init = nu;
  }

  std::vector<double> u_hat;
  if (config.condition_on_u)
    u_hat.assign(fit.u_hat.data(), fit.u_hat.data() + fit.u_hat.size());

  auto one_replicate = [&](int rep) {
    detail_boot::Replicate out;
    try {
      RngEngine rng = make_stream(config.seed, static_cast<std::uint64_t>(rep));
      const PreparedPanel sim = simulate_dataset(
          fit.theta, curve, fit.panel, config.condition_on_u ? &u_hat : nullptr, rng);
      const FitResult refit = smsn::fit(sim, curve, family, refit_cfg);
      if (!refit.converged) {
        out.reason = "replicate " + std::to_string(rep) + ": refit did not converge";
        return out;
      }

      double sse = 0.0;
      long n_total = 0;
      out.curves.resize(n_subj);
      out.totals.resize(n_subj);
      for (std::size_t i = 0; i < n_subj; ++i) {
        const Subject& s = refit.panel.subjects[i];
        const Eigen::Index n = s.t.size();
        const VectorXd fitted = curve.eta_vec(s.t, refit.theta.beta, refit.b_hat[i]);
        sse += (fitted - s.y).squaredNorm();
        n_total += n;

        VectorXd rc(grids[i].size());
        rc.head(n) = k_z * fitted;
        if (config.horizon_days > 0) {
          const Forecast fc = predict_future(refit, curve, s.name, future_times[i]);
          rc.tail(config.horizon_days) = fc.raw;
        }
        out.curves[i] = rc;

        if (!config.total_horizons.empty()) {
          const Date last = s.first_death.plus_days(
              static_cast<long>(std::llround(s.t[n - 1])));
          std::vector<Date> dates;
          dates.reserve(config.total_horizons.size());
          for (long h : config.total_horizons) dates.push_back(last.plus_days(h));
          const CumulativeForecast cf = cumulative_forecast(refit, curve, s.name, dates);
          out.totals[i].assign(cf.totals.data(), cf.totals.data() + cf.totals.size());
        }
      }
      out.mse = sse / double(n_total);
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.curves.clear();
      out.totals.clear();
      out.reason = "replicate " + std::to_string(rep) + ": " + e.what();
    }
    return out;
  };

  std::vector<detail_boot::Replicate> reps(config.M);
  if (config.workers == 1) {
    for (int rep = 0; rep < config.M; ++rep) reps[rep] = one_replicate(rep);
  } else {
    std::atomic<int> next{0};
    auto drain = [&] {
      for (int rep = next.fetch_add(1); rep < config.M; rep = next.fetch_add(1))
        reps[rep] = one_replicate(rep);
    };
    std::vector<std::thread> pool;
    const int width = std::min(config.workers, config.M);
    pool.reserve(width);
    for (int w = 0; w < width; ++w) pool.emplace_back(drain);
    for (auto& th : pool) th.join();
  }

  BootstrapResult res;
  res.requested = config.M;
  std::vector<int> survivors;
  for (int rep = 0; rep < config.M; ++rep) {
    if (reps[rep].ok) {
      survivors.push_back(rep);
    } else {
      ++res.failures;
      res.failure_reasons.push_back(reps[rep].reason);
    }
  }

  res.kept = kept_after_trim(config.M, res.failures, config.trim_frac);
  res.trimmed = static_cast<int>(survivors.size()) - res.kept;
  std::stable_sort(survivors.begin(), survivors.end(),
                   [&](int a, int b) { return reps[a].mse < reps[b].mse; });
  survivors.resize(static_cast<std::size_t>(std::max(res.kept, 0)));
  std::sort(survivors.begin(), survivors.end());
  if (res.kept < 10) {
    std::string msg = "bootstrap kept " + std::to_string(res.kept) + " of " +
                      std::to_string(config.M) + " replicates (" +
                      std::to_string(res.failures) + " failures, " +
                      std::to_string(res.trimmed) + " trimmed)";
    if (!res.failure_reasons.empty()) msg += "; first failure: " + res.failure_reasons.front();
    throw numerical_error(msg);
  }

  res.bands.resize(n_subj);
  res.peak_intervals.resize(n_subj);
  res.totals_intervals.resize(n_subj);
  std::vector<double> pool_vals(survivors.size());
  for (std::size_t i = 0; i < n_subj; ++i) {
    const Subject& s = fit.panel.subjects[i];
    BandCurve& band = res.bands[i];
    band.subject = s.name;
    band.t = grids[i];
    band.dates.reserve(grids[i].size());
    for (Eigen::Index j = 0; j < grids[i].size(); ++j)
      band.dates.push_back(s.first_death.plus_days(static_cast<long>(std::llround(grids[i][j]))));
    band.lo.resize(grids[i].size());
    band.hi.resize(grids[i].size());
    for (Eigen::Index j = 0; j < grids[i].size(); ++j) {
      for (std::size_t r = 0; r < survivors.size(); ++r)
        pool_vals[r] = reps[survivors[r]].curves[i][j];
      std::sort(pool_vals.begin(), pool_vals.end());
      band.lo[j] = detail_boot::quantile_sorted(pool_vals, config.alpha / 2.0);
      band.hi[j] = detail_boot::quantile_sorted(pool_vals, 1.0 - config.alpha / 2.0);
    }
    const auto peak = peak_interval(band.lo, band.hi, band.dates);
    res.peak_intervals[i] = PeakInterval{peak.first, peak.second};

    res.totals_intervals[i].resize(config.total_horizons.size());
    for (std::size_t h = 0; h < config.total_horizons.size(); ++h) {
      for (std::size_t r = 0; r < survivors.size(); ++r)
        pool_vals[r] = reps[survivors[r]].totals[i][h];
      std::sort(pool_vals.begin(), pool_vals.end());
      res.totals_intervals[i][h] =
          HorizonInterval{config.total_horizons[h],
                          detail_boot::quantile_sorted(pool_vals, config.alpha / 2.0),
                          detail_boot::quantile_sorted(pool_vals, 1.0 - config.alpha / 2.0)};
    }
  }
  return res;
}

}  // namespace smsn

#pragma once

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smsn/errors.hpp"
#include "smsn/rng.hpp"

namespace smsn {

enum class MixingKind { normal, student_t, slash, contaminated_normal };

/// Distribution H(u; nu) of the positive scale factor U in a scale mixture.
///
/// Concrete laws: StudentT -> U ~ Gamma(nu/2, rate nu/2); Slash -> U ~ Beta(nu, 1);
/// ContaminatedNormal -> U = gamma with probability nu, else 1. Normal is the
/// degenerate mixture U == 1.
class MixingLaw {
 public:
  static MixingLaw normal() { return MixingLaw(MixingKind::normal, 0.0, 0.0); }

  static MixingLaw student_t(double nu) {
    if (!(nu > 0.0)) throw invalid_parameter("student_t mixing requires nu > 0");
    return MixingLaw(MixingKind::student_t, nu, 0.0);
  }

  static MixingLaw slash(double nu) {
    if (!(nu > 0.0)) throw invalid_parameter("slash mixing requires nu > 0");
    return MixingLaw(MixingKind::slash, nu, 0.0);
  }

  static MixingLaw contaminated_normal(double nu, double gamma) {
    if (!(nu > 0.0 && nu < 1.0))
      throw invalid_parameter("contaminated_normal mixing requires 0 < nu < 1");
    if (!(gamma > 0.0 && gamma < 1.0))
      throw invalid_parameter("contaminated_normal mixing requires 0 < gamma < 1");
    return MixingLaw(MixingKind::contaminated_normal, nu, gamma);
  }

  MixingKind kind() const { return kind_; }
  double nu() const { return nu_; }
  double gamma() const { return gamma_; }

  /// True when U has a finite set of atoms (Normal, ContaminatedNormal).
  bool discrete() const {
    return kind_ == MixingKind::normal || kind_ == MixingKind::contaminated_normal;
  }

  /// Atoms (u, log weight) of a discrete law.
  std::vector<std::pair<double, double>> atoms() const {
    switch (kind_) {
      case MixingKind::normal:
        return {{1.0, 0.0}};
      case MixingKind::contaminated_normal:
        return {{gamma_, std::log(nu_)}, {1.0, std::log1p(-nu_)}};
      default:
        throw invalid_parameter("atoms() on a continuous mixing law");
    }
  }

  /// Upper end of the support of U.
  double upper_support() const {
    return kind_ == MixingKind::slash ? 1.0 : std::numeric_limits<double>::infinity();
  }

  /// log h(u; nu) for continuous laws.
  double log_density(double u) const {
    switch (kind_) {
      case MixingKind::student_t: {
        const double a = 0.5 * nu_;
        return a * std::log(a) - std::lgamma(a) + (a - 1.0) * std::log(u) - a * u;
      }
      case MixingKind::slash:
        if (u <= 0.0 || u > 1.0) return -std::numeric_limits<double>::infinity();
        return std::log(nu_) + (nu_ - 1.0) * std::log(u);
      default:
        throw invalid_parameter("log_density() on a discrete mixing law");
    }
  }

  bool k1_defined() const {
    switch (kind_) {
      case MixingKind::student_t:
        return nu_ > 1.0;
      case MixingKind::slash:
        return nu_ > 0.5;
      default:
        return true;
    }
  }

  /// k1 = E{U^{-1/2}} in closed form.
  double k1() const {
    switch (kind_) {
      case MixingKind::normal:
        return 1.0;
      case MixingKind::student_t:
        if (nu_ <= 1.0)
          throw invalid_parameter("E{U^{-1/2}} undefined for student_t with nu <= 1");
        return std::sqrt(0.5 * nu_) *
               std::exp(std::lgamma(0.5 * (nu_ - 1.0)) - std::lgamma(0.5 * nu_));
      case MixingKind::slash:
        if (nu_ <= 0.5)
          throw invalid_parameter("E{U^{-1/2}} undefined for slash with nu <= 1/2");
        return nu_ / (nu_ - 0.5);
      case MixingKind::contaminated_normal:
        return nu_ / std::sqrt(gamma_) + (1.0 - nu_);
    }
    throw invalid_parameter("unknown mixing kind");
  }

  double sample(RngEngine& rng) const {
    switch (kind_) {
      case MixingKind::normal:
        return 1.0;
      case MixingKind::student_t: {
        std::gamma_distribution<double> g(0.5 * nu_, 2.0 / nu_);
        return g(rng);
      }
      case MixingKind::slash: {
        // Beta(nu, 1) via inverse cdf.
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        double v = u01(rng);
        while (v <= 0.0) v = u01(rng);
        return std::pow(v, 1.0 / nu_);
      }
      case MixingKind::contaminated_normal: {
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        return u01(rng) < nu_ ? gamma_ : 1.0;
      }
    }
    throw invalid_parameter("unknown mixing kind");
  }

  /// Free scalar parameters of the law (for information criteria).
  int n_params() const {
    switch (kind_) {
      case MixingKind::normal:
        return 0;
      case MixingKind::contaminated_normal:
        return 2;
      default:
        return 1;
    }
  }

  std::string label() const {
    switch (kind_) {
      case MixingKind::normal:
        return "normal";
      case MixingKind::student_t:
        return "student_t";
      case MixingKind::slash:
        return "slash";
      case MixingKind::contaminated_normal:
        return "contaminated_normal";
    }
    return "?";
  }

 private:
  MixingLaw(MixingKind kind, double nu, double gamma) : kind_(kind), nu_(nu), gamma_(gamma) {}

  MixingKind kind_;
  double nu_;
  double gamma_;
};

}  // namespace smsn

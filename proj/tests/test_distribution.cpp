#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <vector>

#include "smsn/distribution.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using smsn::MatrixXd;
using smsn::MixingLaw;
using smsn::SmsnParams;
using smsn::VectorXd;

namespace {

VectorXd vec1(double x) {
  VectorXd v(1);
  v << x;
  return v;
}

MatrixXd mat1(double x) {
  MatrixXd m(1, 1);
  m << x;
  return m;
}

// Standalone oracle: assembles the mixture density from first principles and
// integrates 2 phi_p(y; mu, Sigma/u) Phi(sqrt(u) A) h(u) du by trapezoid on a
// log grid. Shares no code with the library integrator.
double oracle_logpdf(const VectorXd& y, const SmsnParams& par, int grid = 200000) {
  const int p = par.dim();
  const MatrixXd sig_inv = par.sigma.inverse();
  const VectorXd e = y - par.mu;
  const double d = e.dot(sig_inv * e);
  const double logdet = std::log(par.sigma.determinant());
  const double a_proj = par.lambda.dot(smsn::sym_inv_sqrt(par.sigma) * e);
  boost::math::normal_distribution<double> n01;

  auto log_term = [&](double u) {
    double lh;
    switch (par.mixing.kind()) {
      case smsn::MixingKind::student_t: {
        const double h = 0.5 * par.mixing.nu();
        lh = h * std::log(h) - std::lgamma(h) + (h - 1.0) * std::log(u) - h * u;
        break;
      }
      case smsn::MixingKind::slash:
        lh = std::log(par.mixing.nu()) + (par.mixing.nu() - 1.0) * std::log(u);
        break;
      default:
        throw std::logic_error("oracle handles continuous laws only");
    }
    const double cdf = boost::math::cdf(n01, std::sqrt(u) * a_proj);
    return std::log(2.0) + 0.5 * p * std::log(u) - 0.5 * p * std::log(2.0 * M_PI) -
           0.5 * logdet - 0.5 * u * d + std::log(cdf) + lh;
  };

  const double s_lo = -40.0;
  const double s_hi = par.mixing.kind() == smsn::MixingKind::slash ? 0.0 : 12.0;
  const double ds = (s_hi - s_lo) / grid;
  std::vector<double> ls(grid + 1);
  double m = -1e300;
  for (int i = 0; i <= grid; ++i) {
    const double s = s_lo + i * ds;
    ls[i] = log_term(std::exp(s)) + s;
    m = std::max(m, ls[i]);
  }
  double acc = 0.0;
  for (int i = 0; i <= grid; ++i) {
    const double w = (i == 0 || i == grid) ? 0.5 : 1.0;
    acc += w * std::exp(ls[i] - m);
  }
  return m + std::log(acc * ds);
}

}  // namespace

TEST_CASE("skew-normal density in one dimension") {
  boost::math::normal_distribution<double> n01;
  for (double y : {-2.0, -0.3, 0.0, 1.0, 3.5}) {
    for (double lam : {-3.0, 0.0, 0.8, 2.0}) {
      const double ref =
          std::log(2.0 * boost::math::pdf(n01, y) * boost::math::cdf(n01, lam * y));
      CHECK_THAT(smsn::sn_logpdf(vec1(y), vec1(0.0), mat1(1.0), vec1(lam)),
                 WithinRel(ref, 1e-12));
    }
  }
}

TEST_CASE("skew-normal with zero skewness is Gaussian") {
  MatrixXd sigma(2, 2);
  sigma << 2.0, 0.6, 0.6, 1.5;
  VectorXd mu(2), y(2);
  mu << 0.5, -1.0;
  y << 1.2, 0.3;
  const VectorXd e = y - mu;
  const double ref = -std::log(2.0 * M_PI) - 0.5 * std::log(sigma.determinant()) -
                     0.5 * e.dot(sigma.inverse() * e);
  CHECK_THAT(smsn::sn_logpdf(y, mu, sigma, VectorXd::Zero(2)), WithinRel(ref, 1e-12));
}

TEST_CASE("normal mixing reduces smsn to skew-normal") {
  MatrixXd sigma(2, 2);
  sigma << 1.4, -0.3, -0.3, 0.9;
  VectorXd mu(2), lam(2), y(2);
  mu << 0.2, -0.4;
  lam << 1.5, -2.0;
  y << -0.7, 0.9;
  SmsnParams par{mu, sigma, lam, MixingLaw::normal()};
  CHECK_THAT(smsn::smsn_logpdf(y, par), WithinRel(smsn::sn_logpdf(y, mu, sigma, lam), 1e-12));
}

TEST_CASE("student-t mixing with zero skewness gives the t density") {
  for (double nu : {1.568, 4.0, 11.0}) {
    SmsnParams par{vec1(0.3), mat1(2.25), vec1(0.0), MixingLaw::student_t(nu)};
    for (double y : {-4.0, 0.3, 1.9, 10.0}) {
      const double ref = smsn::log_t_pdf((y - 0.3) / 1.5, nu) - std::log(1.5);
      CHECK_THAT(smsn::smsn_logpdf(vec1(y), par), WithinRel(ref, 1e-9));
    }
  }
}

TEST_CASE("skew-t closed form, one dimension") {
  // f(y) = 2 t_nu(y) T_{nu+1}(lambda y sqrt((nu+1)/(nu+y^2)))
  for (double nu : {1.568, 3.0, 8.0}) {
    boost::math::students_t_distribution<double> tcdf(nu + 1.0);
    for (double lam : {-39.985, -2.0, 0.7, 5.0}) {
      SmsnParams par{vec1(0.0), mat1(1.0), vec1(lam), MixingLaw::student_t(nu)};
      for (double y : {-1.7, -0.2, 0.4, 2.8}) {
        const double arg = lam * y * std::sqrt((nu + 1.0) / (nu + y * y));
        const double ref = std::log(2.0) + smsn::log_t_pdf(y, nu) +
                           std::log(boost::math::cdf(tcdf, arg));
        CHECK_THAT(smsn::smsn_logpdf(vec1(y), par), WithinRel(ref, 1e-8));
      }
    }
  }
}

TEST_CASE("skew-t closed form, two dimensions") {
  // f(y) = 2 t_{2,nu}(y; Sigma) T_{nu+2}(A sqrt((nu+2)/(nu+d)))
  const double nu = 3.5;
  MatrixXd sigma(2, 2);
  sigma << 1.8, 0.4, 0.4, 1.1;
  VectorXd lam(2);
  lam << 2.2, -1.1;
  SmsnParams par{VectorXd::Zero(2), sigma, lam, MixingLaw::student_t(nu)};
  boost::math::students_t_distribution<double> tcdf(nu + 2.0);
  for (double y1 : {-1.2, 0.5}) {
    for (double y2 : {-0.4, 1.3}) {
      VectorXd y(2);
      y << y1, y2;
      const double d = y.dot(sigma.inverse() * y);
      const double a_proj = lam.dot(smsn::sym_inv_sqrt(sigma) * y);
      const double log_t2 = std::lgamma(0.5 * (nu + 2.0)) - std::lgamma(0.5 * nu) -
                            std::log(nu * M_PI) - 0.5 * std::log(sigma.determinant()) -
                            0.5 * (nu + 2.0) * std::log1p(d / nu);
      const double arg = a_proj * std::sqrt((nu + 2.0) / (nu + d));
      const double ref = std::log(2.0) + log_t2 + std::log(boost::math::cdf(tcdf, arg));
      CHECK_THAT(smsn::smsn_logpdf(y, par), WithinRel(ref, 1e-8));
    }
  }
}

TEST_CASE("slash density at the centre has a closed form") {
  // f(0) = phi(0) nu / (nu + 1/2) in one dimension with unit scale
  for (double nu : {1.0, 2.0, 3.5}) {
    SmsnParams par{vec1(0.0), mat1(1.0), vec1(0.0), MixingLaw::slash(nu)};
    const double ref = smsn::log_norm_pdf(0.0) + std::log(nu / (nu + 0.5));
    CHECK_THAT(smsn::smsn_logpdf(vec1(0.0), par), WithinRel(ref, 1e-9));
  }
}

TEST_CASE("quadrature agrees with a standalone trapezoid oracle") {
  MatrixXd sigma(2, 2);
  sigma << 1.8, 0.4, 0.4, 1.1;
  VectorXd lam(2);
  lam << -4.0, 1.5;
  VectorXd y(2);
  y << 0.8, -1.9;
  for (auto law : {MixingLaw::student_t(1.568), MixingLaw::student_t(5.0),
                   MixingLaw::slash(1.2), MixingLaw::slash(2.7)}) {
    SmsnParams par{VectorXd::Zero(2), sigma, lam, law};
    CHECK_THAT(smsn::smsn_logpdf(y, par), WithinRel(oracle_logpdf(y, par), 1e-6));
  }
}

TEST_CASE("contaminated normal density is the two-atom mixture") {
  const double nu = 0.3, gamma = 0.5;
  SmsnParams par{vec1(0.1), mat1(1.69), vec1(1.4), MixingLaw::contaminated_normal(nu, gamma)};
  for (double y : {-2.0, 0.1, 1.5, 30.0}) {
    const double l1 = smsn::sn_logpdf(vec1((y - 0.1)), vec1(0.0), mat1(1.69 / gamma),
                                      vec1(1.4)) +
                      std::log(nu);
    const double l2 =
        smsn::sn_logpdf(vec1(y - 0.1), vec1(0.0), mat1(1.69), vec1(1.4)) + std::log1p(-nu);
    CHECK_THAT(smsn::smsn_logpdf(vec1(y), par), WithinRel(smsn::logsumexp(l1, l2), 1e-10));
  }
}

TEST_CASE("density integrates to one over a fine grid") {
  for (auto law : {MixingLaw::normal(), MixingLaw::student_t(4.0),
                   MixingLaw::contaminated_normal(0.3, 0.5)}) {
    SmsnParams par{vec1(0.0), mat1(1.0), vec1(-3.0), law};
    double acc = 0.0;
    const double dy = 0.01;
    for (double y = -60.0; y <= 25.0; y += dy) acc += std::exp(smsn::smsn_logpdf(vec1(y), par)) * dy;
    CHECK_THAT(acc, WithinAbs(1.0, 1e-4));
  }
}

TEST_CASE("t mixing posterior has gamma closed forms") {
  // U | y ~ Gamma((nu+p)/2, (nu+d)/2) when lambda = 0
  const double nu = 4.0;
  SmsnParams par{vec1(0.0), mat1(1.0), vec1(0.0), MixingLaw::student_t(nu)};
  for (double y : {0.0, 1.0, 2.5, 8.0}) {
    const auto w = smsn::conditional_weights(vec1(y), par);
    const double d = y * y;
    CHECK_THAT(w.kappa, WithinRel((nu + 1.0) / (nu + d), 1e-8));
    const double eum =
        std::sqrt(0.5 * (nu + d)) * std::exp(std::lgamma(0.5 * (nu + 1.0) - 0.5) -
                                             std::lgamma(0.5 * (nu + 1.0)));
    CHECK_THAT(w.tau_m1, WithinRel(smsn::kSqrtTwoOverPi * eum, 1e-8));
  }
  const auto w0 = smsn::conditional_weights(vec1(0.0), par);
  CHECK_THAT(w0.kappa, WithinRel(1.25, 1e-9));
}

TEST_CASE("normal posterior weights are exact") {
  SmsnParams par{vec1(0.0), mat1(1.0), vec1(2.0), MixingLaw::normal()};
  for (double y : {-1.0, 0.4, 2.2}) {
    const auto w = smsn::conditional_weights(vec1(y), par);
    CHECK_THAT(w.kappa, WithinRel(1.0, 1e-12));
    CHECK_THAT(w.tau_m1, WithinRel(smsn::wphi(2.0 * y), 1e-10));
  }
}

TEST_CASE("posterior weights match a standalone oracle under skewness") {
  const double nu = 1.568;
  const double lam = -6.0;
  SmsnParams par{vec1(0.0), mat1(1.0), vec1(lam), MixingLaw::student_t(nu)};
  boost::math::normal_distribution<double> n01;
  for (double y : {-2.3, -0.5, 0.7}) {
    const double d = y * y;
    const double a_proj = lam * y;
    auto log_weighted = [&](double extra_halfpow, bool pdf_not_cdf) {
      const double s_lo = -40.0, s_hi = 12.0;
      const int grid = 200000;
      const double ds = (s_hi - s_lo) / grid;
      double m = -1e300;
      std::vector<double> ls(grid + 1);
      for (int i = 0; i <= grid; ++i) {
        const double s = s_lo + i * ds;
        const double u = std::exp(s);
        const double h = 0.5 * nu;
        double l = (0.5 + extra_halfpow) * std::log(u) - 0.5 * u * d + h * std::log(h) -
                   std::lgamma(h) + (h - 1.0) * std::log(u) - h * u + s;
        l += pdf_not_cdf ? std::log(boost::math::pdf(n01, std::sqrt(u) * a_proj))
                         : std::log(boost::math::cdf(n01, std::sqrt(u) * a_proj));
        ls[i] = l;
        m = std::max(m, l);
      }
      double acc = 0.0;
      for (int i = 0; i <= grid; ++i)
        acc += ((i == 0 || i == grid) ? 0.5 : 1.0) * std::exp(ls[i] - m);
      return m + std::log(acc * ds);
    };
    const double log_z = log_weighted(0.0, false);
    const double kappa_ref = std::exp(log_weighted(1.0, false) - log_z);
    const double tau_ref = std::exp(log_weighted(-0.5, true) - log_z);
    const auto w = smsn::conditional_weights(vec1(y), par);
    CHECK_THAT(w.kappa, WithinRel(kappa_ref, 1e-6));
    CHECK_THAT(w.tau_m1, WithinRel(tau_ref, 1e-6));
    CHECK(w.kappa > 0.0);
    CHECK(w.tau_m1 >= 0.0);
  }
}

TEST_CASE("sampler matches skew-normal moments") {
  MatrixXd sigma(2, 2);
  sigma << 1.3, 0.4, 0.4, 0.8;
  VectorXd mu(2), lam(2);
  mu << 0.7, -0.2;
  lam << 3.0, -1.0;
  SmsnParams par{mu, sigma, lam, MixingLaw::normal()};
  smsn::RngEngine rng = smsn::make_stream(42, 7);
  const int n = 400000;
  const MatrixXd draws = smsn::sample_smsn(par, n, rng);
  REQUIRE(draws.rows() == n);
  REQUIRE(draws.cols() == 2);

  const VectorXd delta = lam / std::sqrt(1.0 + lam.squaredNorm());
  const VectorXd mean_ref = mu + smsn::kSqrtTwoOverPi * (smsn::sym_sqrt(sigma) * delta);
  const VectorXd mean_hat = draws.colwise().mean().transpose();
  CHECK_THAT(mean_hat[0], WithinAbs(mean_ref[0], 0.01));
  CHECK_THAT(mean_hat[1], WithinAbs(mean_ref[1], 0.01));

  const MatrixXd centered = draws.rowwise() - mean_hat.transpose();
  const MatrixXd cov_hat = centered.transpose() * centered / double(n - 1);
  const VectorXd sd = smsn::sym_sqrt(sigma) * delta;
  const MatrixXd cov_ref = sigma - (2.0 / M_PI) * (sd * sd.transpose());
  CHECK((cov_hat - cov_ref).norm() < 0.02);
}

TEST_CASE("sampler mean scales by k1 under student-t mixing") {
  VectorXd mu = vec1(0.0), lam = vec1(4.0);
  SmsnParams par{mu, mat1(1.0), lam, MixingLaw::student_t(4.0)};
  smsn::RngEngine rng = smsn::make_stream(42, 11);
  const int n = 400000;
  const MatrixXd draws = smsn::sample_smsn(par, n, rng);
  const double delta = 4.0 / std::sqrt(17.0);
  const double mean_ref = MixingLaw::student_t(4.0).k1() * smsn::kSqrtTwoOverPi * delta;
  CHECK_THAT(draws.col(0).mean(), WithinAbs(mean_ref, 0.015));
}

TEST_CASE("sampler is reproducible from the stream id") {
  SmsnParams par{vec1(1.0), mat1(2.0), vec1(-1.0), MixingLaw::slash(2.0)};
  smsn::RngEngine a = smsn::make_stream(9, 3);
  smsn::RngEngine b = smsn::make_stream(9, 3);
  CHECK(smsn::sample_smsn(par, 50, a) == smsn::sample_smsn(par, 50, b));
  smsn::RngEngine c = smsn::make_stream(9, 4);
  CHECK(smsn::sample_smsn(par, 50, a) != smsn::sample_smsn(par, 50, c));
}

TEST_CASE("parameter validation") {
  SmsnParams bad_dim{VectorXd::Zero(2), MatrixXd::Identity(2, 2), VectorXd::Zero(3),
                     MixingLaw::normal()};
  CHECK_THROWS_AS(bad_dim.validate(), smsn::shape_error);
  MatrixXd indef = MatrixXd::Identity(2, 2);
  indef(1, 1) = -0.5;
  SmsnParams bad_pd{VectorXd::Zero(2), indef, VectorXd::Zero(2), MixingLaw::normal()};
  CHECK_THROWS_AS(bad_pd.validate(), smsn::invalid_parameter);
  CHECK_THROWS_AS(smsn::smsn_logpdf(VectorXd::Zero(3),
                                    SmsnParams{VectorXd::Zero(2), MatrixXd::Identity(2, 2),
                                               VectorXd::Zero(2), MixingLaw::normal()}),
                  smsn::shape_error);
}

#include <catch2/catch_amalgamated.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "smsn/math.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normal pdf and cdf match reference implementations") {
  boost::math::normal_distribution<double> n01;
  for (double x : {-8.0, -3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.5, 7.0}) {
    CHECK_THAT(smsn::norm_pdf(x), WithinRel(boost::math::pdf(n01, x), 1e-13));
    CHECK_THAT(smsn::norm_cdf(x), WithinRel(boost::math::cdf(n01, x), 1e-13));
    CHECK_THAT(smsn::log_norm_cdf(x), WithinRel(std::log(boost::math::cdf(n01, x)), 1e-12));
  }
}

TEST_CASE("log_norm_cdf stays finite and tight in the far left tail") {
  // Mills ratio bounds: phi(x) (-x)/(x^2+1) < Phi(x) < phi(x)/(-x) for x < 0.
  for (double x : {-38.0, -50.0, -120.0, -300.0}) {
    const double l = smsn::log_norm_cdf(x);
    const double upper = smsn::log_norm_pdf(x) - std::log(-x);
    const double lower = smsn::log_norm_pdf(x) + std::log(-x) - std::log(x * x + 1.0);
    REQUIRE(std::isfinite(l));
    CHECK(l < upper);
    CHECK(l > lower);
  }
}

TEST_CASE("log_norm_cdf branches agree near the switch point") {
  for (double x = -37.8; x < -36.5; x += 0.01) {
    const double direct = std::log(0.5 * std::erfc(-x * M_SQRT1_2));
    CHECK_THAT(smsn::log_norm_cdf(x), WithinRel(direct, 1e-9));
  }
}

TEST_CASE("wphi equals phi/Phi and obeys tail bounds") {
  boost::math::normal_distribution<double> n01;
  for (double x : {-5.0, -1.0, 0.0, 2.0}) {
    const double ref = boost::math::pdf(n01, x) / boost::math::cdf(n01, x);
    CHECK_THAT(smsn::wphi(x), WithinRel(ref, 1e-12));
  }
  // -x < W(x) < -x - 1/x for x < 0.
  for (double x : {-40.0, -80.0, -200.0}) {
    const double w = smsn::wphi(x);
    CHECK(w > -x);
    CHECK(w < -x - 1.0 / x);
  }
}

TEST_CASE("logsumexp is exact and robust") {
  CHECK_THAT(smsn::logsumexp(std::log(2.0), std::log(3.0)), WithinRel(std::log(5.0), 1e-14));
  CHECK_THAT(smsn::logsumexp(-1000.0, -1000.0), WithinAbs(-1000.0 + std::log(2.0), 1e-12));
  CHECK_THAT(smsn::logsumexp(-1e6, 0.0), WithinAbs(0.0, 1e-15));
  const double ninf = -std::numeric_limits<double>::infinity();
  CHECK(smsn::logsumexp(ninf, -2.5) == -2.5);
  CHECK(smsn::logsumexp(-2.5, ninf) == -2.5);
}

TEST_CASE("log_t_pdf matches reference density") {
  CHECK_THAT(smsn::log_t_pdf(0.0, 4.0), WithinRel(std::log(0.375), 1e-13));
  for (double nu : {1.0, 2.5, 4.0, 30.0}) {
    boost::math::students_t_distribution<double> t(nu);
    for (double x : {-3.0, -0.7, 0.0, 1.2, 6.0}) {
      CHECK_THAT(smsn::log_t_pdf(x, nu), WithinRel(std::log(boost::math::pdf(t, x)), 1e-12));
    }
  }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "smsn/mixing.hpp"
#include "smsn/quadrature.hpp"
#include "smsn/rng.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using smsn::MixingLaw;

TEST_CASE("constructors validate their domains") {
  CHECK_THROWS_AS(MixingLaw::student_t(0.0), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::student_t(-2.0), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::slash(0.0), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::contaminated_normal(0.0, 0.5), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::contaminated_normal(1.0, 0.5), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::contaminated_normal(0.3, 0.0), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::contaminated_normal(0.3, 1.0), smsn::invalid_parameter);
  CHECK_NOTHROW(MixingLaw::student_t(1.568));
  CHECK_NOTHROW(MixingLaw::contaminated_normal(0.3, 0.5));
}

TEST_CASE("continuous mixing densities integrate to one") {
  for (auto law : {MixingLaw::student_t(1.568), MixingLaw::student_t(4.0),
                   MixingLaw::slash(1.0), MixingLaw::slash(2.7)}) {
    const double logz = smsn::log_integral_positive(
        [&](double u) { return law.log_density(u); }, law.upper_support());
    CHECK_THAT(logz, WithinAbs(0.0, 1e-8));
  }
}

TEST_CASE("k1 closed forms match quadrature") {
  CHECK(MixingLaw::normal().k1() == 1.0);
  CHECK_THAT(MixingLaw::student_t(4.0).k1(), WithinRel(std::sqrt(M_PI / 2.0), 1e-12));
  CHECK_THAT(MixingLaw::slash(2.0).k1(), WithinRel(4.0 / 3.0, 1e-12));
  CHECK_THAT(MixingLaw::contaminated_normal(0.3, 0.5).k1(),
             WithinRel(0.3 / std::sqrt(0.5) + 0.7, 1e-12));

  for (auto law : {MixingLaw::student_t(1.568), MixingLaw::student_t(6.0),
                   MixingLaw::slash(0.9), MixingLaw::slash(3.0)}) {
    const double logk1 = smsn::log_integral_positive(
        [&](double u) { return -0.5 * std::log(u) + law.log_density(u); },
        law.upper_support());
    CHECK_THAT(law.k1(), WithinRel(std::exp(logk1), 1e-8));
  }
}

TEST_CASE("k1 existence boundaries") {
  CHECK(MixingLaw::student_t(1.2).k1_defined());
  CHECK_FALSE(MixingLaw::student_t(1.0).k1_defined());
  CHECK_THROWS_AS(MixingLaw::student_t(0.9).k1(), smsn::invalid_parameter);
  CHECK(MixingLaw::slash(0.6).k1_defined());
  CHECK_FALSE(MixingLaw::slash(0.5).k1_defined());
  CHECK_THROWS_AS(MixingLaw::slash(0.4).k1(), smsn::invalid_parameter);
}

TEST_CASE("atoms of discrete laws") {
  const auto na = MixingLaw::normal().atoms();
  REQUIRE(na.size() == 1);
  CHECK(na[0].first == 1.0);
  CHECK(na[0].second == 0.0);

  const auto ca = MixingLaw::contaminated_normal(0.25, 0.4).atoms();
  REQUIRE(ca.size() == 2);
  CHECK(ca[0].first == 0.4);
  CHECK_THAT(std::exp(ca[0].second), WithinRel(0.25, 1e-14));
  CHECK_THAT(std::exp(ca[1].second), WithinRel(0.75, 1e-14));
  CHECK_THROWS_AS(MixingLaw::normal().log_density(1.0), smsn::invalid_parameter);
  CHECK_THROWS_AS(MixingLaw::student_t(3.0).atoms(), smsn::invalid_parameter);
}

TEST_CASE("sampling matches first moments") {
  smsn::RngEngine rng = smsn::make_stream(20200608, 1);
  const int n = 200000;

  auto moments = [&](const MixingLaw& law) {
    double su = 0.0, sr = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = law.sample(rng);
      su += u;
      sr += 1.0 / std::sqrt(u);
    }
    return std::pair{su / n, sr / n};
  };

  {
    auto [mu, mr] = moments(MixingLaw::student_t(4.0));
    CHECK_THAT(mu, WithinAbs(1.0, 0.01));
    CHECK_THAT(mr, WithinAbs(MixingLaw::student_t(4.0).k1(), 0.01));
  }
  {
    auto [mu, mr] = moments(MixingLaw::slash(2.0));
    CHECK_THAT(mu, WithinAbs(2.0 / 3.0, 0.01));
    CHECK_THAT(mr, WithinAbs(MixingLaw::slash(2.0).k1(), 0.01));
  }
  {
    auto [mu, mr] = moments(MixingLaw::contaminated_normal(0.3, 0.5));
    CHECK_THAT(mu, WithinAbs(0.3 * 0.5 + 0.7, 0.01));
    CHECK_THAT(mr, WithinAbs(MixingLaw::contaminated_normal(0.3, 0.5).k1(), 0.01));
  }
  CHECK(MixingLaw::normal().sample(rng) == 1.0);
}

TEST_CASE("parameter counts and labels") {
  CHECK(MixingLaw::normal().n_params() == 0);
  CHECK(MixingLaw::student_t(3.0).n_params() == 1);
  CHECK(MixingLaw::slash(3.0).n_params() == 1);
  CHECK(MixingLaw::contaminated_normal(0.3, 0.5).n_params() == 2);
  CHECK(MixingLaw::student_t(3.0).label() == "student_t");
}

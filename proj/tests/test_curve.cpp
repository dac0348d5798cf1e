#include <catch2/catch_amalgamated.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <random>

#include "smsn/curve.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using smsn::CurveParams;
using smsn::GeneralizedLogisticCurve;
using smsn::VectorXd;

namespace {

VectorXd beta_of(double b1, double b2, double b3, double b4) {
  VectorXd v(4);
  v << b1, b2, b3, b4;
  return v;
}

VectorXd b_of(double b1, double b2) {
  VectorXd v(2);
  v << b1, b2;
  return v;
}

const VectorXd kBrazilBeta =
    beta_of(std::log(78771346.0), std::log(1.436), std::log(0.031), std::log(18.55));

}  // namespace

TEST_CASE("eta at the origin with unit parameters") {
  GeneralizedLogisticCurve curve;
  CHECK_THAT(curve.eta(0.0, beta_of(0, 0, 0, 0), b_of(0, 0)), WithinRel(0.25, 1e-12));
}

TEST_CASE("eta is positive and vanishes in both tails") {
  GeneralizedLogisticCurve curve;
  const VectorXd b0 = b_of(0, 0);
  for (double t : {-300.0, -10.0, 0.0, 82.5, 400.0}) {
    CHECK(curve.eta(t, kBrazilBeta, b0) > 0.0);
  }
  CHECK(curve.eta(-1e5, kBrazilBeta, b0) < 1e-100);
  CHECK(curve.eta(1e5, kBrazilBeta, b0) < 1e-100);
  CHECK(std::isfinite(curve.eta(-1e8, kBrazilBeta, b0)));
  CHECK(std::isfinite(curve.eta(1e8, kBrazilBeta, b0)));
}

TEST_CASE("peak time closed form") {
  CHECK(smsn::peak_time(CurveParams{5.0, 2.0, 0.7, 2.0}) == 0.0);
  CHECK_THAT(smsn::peak_time(CurveParams{1.0, 1.0, 1.0, std::exp(1.0)}), WithinRel(1.0, 1e-12));
  const CurveParams brazil{78771346.0, 1.436, 0.031, 18.55};
  CHECK_THAT(smsn::peak_time(brazil), WithinAbs(82.5, 0.2));
}

TEST_CASE("peak time is the argmax of eta") {
  GeneralizedLogisticCurve curve;
  const VectorXd b0 = b_of(0, 0);
  const CurveParams p = GeneralizedLogisticCurve::params(kBrazilBeta, b0);
  const double tp = smsn::peak_time(p);
  const double top = curve.eta(tp, kBrazilBeta, b0);
  for (double eps : {0.1, 1.0, 10.0}) {
    CHECK(top >= curve.eta(tp + eps, kBrazilBeta, b0));
    CHECK(top >= curve.eta(tp - eps, kBrazilBeta, b0));
  }
  CHECK(curve.eta(82.5, kBrazilBeta, b0) > curve.eta(60.0, kBrazilBeta, b0));
  CHECK(curve.eta(82.5, kBrazilBeta, b0) > curve.eta(100.0, kBrazilBeta, b0));
}

TEST_CASE("total asymptote closed form") {
  CHECK_THAT(smsn::total_asymptote(CurveParams{1.0, 1.0, 0.3, 7.0}), WithinRel(1.0, 1e-12));
  CHECK_THAT(smsn::total_asymptote(CurveParams{78771346.0, 1.436, 0.031, 18.55}),
             WithinRel(95476.0, 0.01));
  CHECK_THAT(smsn::total_asymptote(CurveParams{78771346.0, 1.619, 0.073, 18.55}),
             WithinRel(10304.0, 0.01));
}

TEST_CASE("cumulative curve") {
  const CurveParams unit{1.0, 1.0, 1.0, 1.0};
  CHECK_THAT(smsn::cumulative(0.0, unit), WithinRel(0.5, 1e-12));

  const CurveParams brazil{78771346.0, 1.436, 0.031, 18.55};
  CHECK_THAT(smsn::cumulative(1e7, brazil), WithinRel(smsn::total_asymptote(brazil), 1e-9));

  GeneralizedLogisticCurve curve;
  const VectorXd b0 = b_of(0, 0);
  using gk = boost::math::quadrature::gauss_kronrod<double, 31>;
  for (double t : {40.0, 82.5, 160.0}) {
    const double numeric = gk::integrate(
        [&](double s) { return curve.eta(s, kBrazilBeta, b0); }, -2000.0, t, 12, 1e-10);
    CHECK_THAT(smsn::cumulative(t, brazil), WithinRel(numeric, 1e-6));
  }

  double prev = 0.0;
  for (double t = -50.0; t <= 250.0; t += 1.0) {
    const double c = smsn::cumulative(t, brazil);
    CHECK(c >= prev);
    prev = c;
  }
  for (double t : {30.0, 82.5, 140.0}) {
    const double fd = (smsn::cumulative(t + 1e-4, brazil) - smsn::cumulative(t - 1e-4, brazil)) /
                      2e-4;
    CHECK_THAT(fd, WithinRel(curve.eta(t, kBrazilBeta, b0), 1e-5));
  }
}

TEST_CASE("scale equivariance in alpha1") {
  GeneralizedLogisticCurve curve;
  const VectorXd b0 = b_of(0.1, -0.2);
  const double k = 37.5;
  VectorXd scaled = kBrazilBeta;
  scaled[0] += std::log(k);
  const CurveParams p = GeneralizedLogisticCurve::params(kBrazilBeta, b0);
  const CurveParams ps = GeneralizedLogisticCurve::params(scaled, b0);
  CHECK_THAT(curve.eta(70.0, scaled, b0), WithinRel(k * curve.eta(70.0, kBrazilBeta, b0), 1e-12));
  CHECK_THAT(smsn::cumulative(70.0, ps), WithinRel(k * smsn::cumulative(70.0, p), 1e-12));
  CHECK_THAT(smsn::total_asymptote(ps), WithinRel(k * smsn::total_asymptote(p), 1e-12));
  CHECK(smsn::peak_time(ps) == smsn::peak_time(p));
}

TEST_CASE("analytic gradients agree with central differences") {
  // Inherits the finite-difference default of the base class as the oracle.
  struct NumericCurve : smsn::CurveModel {
    GeneralizedLogisticCurve inner;
    int n_fixed() const override { return 4; }
    int n_random() const override { return 2; }
    double eta(double t, const VectorXd& beta, const VectorXd& b) const override {
      return inner.eta(t, beta, b);
    }
  };
  GeneralizedLogisticCurve analytic;
  NumericCurve numeric;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> ut(-30.0, 180.0), u1(10.0, 16.0), u2(-1.0, 1.5),
      u3(-4.0, -2.0), u4(0.5, 3.0), ub(-0.5, 0.5);
  Eigen::RowVectorXd wa, ha, wn, hn;
  for (int rep = 0; rep < 50; ++rep) {
    const double t = ut(rng);
    const VectorXd beta = beta_of(u1(rng), u2(rng), u3(rng), u4(rng));
    const VectorXd b = b_of(ub(rng), ub(rng));
    analytic.gradients(t, beta, b, wa, ha);
    numeric.gradients(t, beta, b, wn, hn);
    const double scale = std::max(1e-12, wn.cwiseAbs().maxCoeff());
    for (int k = 0; k < 4; ++k) CHECK_THAT(wa[k], WithinAbs(wn[k], 1e-5 * scale));
    for (int k = 0; k < 2; ++k) CHECK_THAT(ha[k], WithinAbs(hn[k], 1e-5 * scale));
    CHECK_THAT(wa[0], WithinRel(analytic.eta(t, beta, b), 1e-10));
    CHECK(wa.segment(1, 2) == ha);
  }
}

TEST_CASE("random-effect gradient vanishes as alpha2 grows") {
  GeneralizedLogisticCurve curve;
  Eigen::RowVectorXd w, h;
  curve.gradients(10.0, beta_of(12.0, 40.0, -3.0, 2.0), b_of(0, 0), w, h);
  CHECK(std::abs(h[0]) < 1e-10);
}

TEST_CASE("design matrices stack gradient rows") {
  GeneralizedLogisticCurve curve;
  VectorXd t(3);
  t << 0.0, 5.0, 10.0;
  smsn::MatrixXd W, H;
  const VectorXd beta = beta_of(12.0, 0.4, -3.4, 2.9);
  const VectorXd b = b_of(0.05, -0.1);
  curve.design(t, beta, b, W, H);
  REQUIRE(W.rows() == 3);
  REQUIRE(W.cols() == 4);
  REQUIRE(H.rows() == 3);
  REQUIRE(H.cols() == 2);
  Eigen::RowVectorXd w, h;
  curve.gradients(5.0, beta, b, w, h);
  CHECK(W.row(1) == w);
  CHECK(H.row(1) == h);
  const VectorXd ev = curve.eta_vec(t, beta, b);
  CHECK(ev[2] == curve.eta(10.0, beta, b));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(smsn::peak_time(CurveParams{1.0, -1.0, 1.0, 1.0}), smsn::invalid_parameter);
  CHECK_THROWS_AS(smsn::total_asymptote(CurveParams{0.0, 1.0, 1.0, 1.0}),
                  smsn::invalid_parameter);
  GeneralizedLogisticCurve curve;
  CHECK_THROWS_AS(curve.eta(0.0, VectorXd::Zero(3), VectorXd::Zero(2)), smsn::shape_error);
  CHECK_THROWS_AS(curve.eta(0.0, VectorXd::Zero(4), VectorXd::Zero(1)), smsn::shape_error);
}

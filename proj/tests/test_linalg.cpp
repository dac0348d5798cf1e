#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "smsn/linalg.hpp"

using Catch::Matchers::WithinRel;
using smsn::MatrixXd;
using smsn::VectorXd;

namespace {

MatrixXd random_spd(int n, unsigned seed) {
  std::srand(seed);
  MatrixXd a = MatrixXd::Random(n, n);
  return a * a.transpose() + n * MatrixXd::Identity(n, n);
}

}  // namespace

TEST_CASE("cholesky accepts SPD and rejects indefinite") {
  const MatrixXd m = random_spd(4, 1);
  CHECK_NOTHROW(smsn::cholesky(m, "m"));
  MatrixXd bad = MatrixXd::Identity(3, 3);
  bad(2, 2) = -1.0;
  CHECK_THROWS_AS(smsn::cholesky(bad, "bad"), smsn::invalid_parameter);
}

TEST_CASE("logdet agrees with direct determinant") {
  for (unsigned seed : {2u, 3u, 4u}) {
    const MatrixXd m = random_spd(5, seed);
    const double ref = std::log(m.determinant());
    CHECK_THAT(smsn::logdet_from_llt(smsn::cholesky(m, "m")), WithinRel(ref, 1e-10));
  }
}

TEST_CASE("symmetric square roots invert each other") {
  const MatrixXd m = random_spd(4, 7);
  const MatrixXd s = smsn::sym_sqrt(m);
  const MatrixXd si = smsn::sym_inv_sqrt(m);
  CHECK((s * s - m).norm() < 1e-10 * m.norm());
  CHECK((si * m * si - MatrixXd::Identity(4, 4)).norm() < 1e-10);
  CHECK((s - s.transpose()).norm() < 1e-12 * s.norm());
}

TEST_CASE("vech round trips the lower triangle") {
  MatrixXd m(3, 3);
  m << 1, 2, 3, 2, 5, 6, 3, 6, 9;
  const VectorXd v = smsn::vech(m);
  REQUIRE(v.size() == 6);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 2.0);
  CHECK(v[2] == 3.0);
  CHECK(v[3] == 5.0);
  CHECK(v[4] == 6.0);
  CHECK(v[5] == 9.0);
  const MatrixXd lower = smsn::unvech_lower(v, 3);
  const MatrixXd sym = lower + lower.transpose() - MatrixXd(lower.diagonal().asDiagonal());
  CHECK((sym - m).norm() == 0.0);
}

#pragma once

#include <Eigen/Dense>
#include <string>

#include "smsn/errors.hpp"

namespace smsn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Cholesky factor (lower) of a symmetric positive definite matrix.
inline Eigen::LLT<MatrixXd> cholesky(const MatrixXd& m, const std::string& what) {
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw invalid_parameter(what + " is not positive definite");
  return llt;
}

inline double logdet_from_llt(const Eigen::LLT<MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

/// Symmetric (spectral) square root. The convention used everywhere a
/// matrix square root or inverse square root appears in this library.
inline MatrixXd sym_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw numerical_error("eigendecomposition failed");
  if (es.eigenvalues().minCoeff() < 0.0)
    throw invalid_parameter("matrix square root of an indefinite matrix");
  return es.operatorSqrt();
}

inline MatrixXd sym_inv_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw numerical_error("eigendecomposition failed");
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw invalid_parameter("inverse square root of a singular matrix");
  return es.operatorInverseSqrt();
}

/// Stacks the lower triangle of a q x q matrix column-major into a vector
/// of length q(q+1)/2.
inline VectorXd vech(const MatrixXd& m) {
  const int q = static_cast<int>(m.rows());
  VectorXd v(q * (q + 1) / 2);
  int k = 0;
  for (int j = 0; j < q; ++j)
    for (int i = j; i < q; ++i) v[k++] = m(i, j);
  return v;
}

inline MatrixXd unvech_lower(const VectorXd& v, int q) {
  MatrixXd m = MatrixXd::Zero(q, q);
  int k = 0;
  for (int j = 0; j < q; ++j)
    for (int i = j; i < q; ++i) m(i, j) = v[k++];
  return m;
}

}  // namespace smsn

#pragma once

#include <stdexcept>
#include <string>

namespace smsn {

/// Base class for all library errors.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A parameter value outside its valid region (non-PD matrix, nu out of range, ...).
struct invalid_parameter : error {
  using error::error;
};

/// Mismatched vector/matrix dimensions.
struct shape_error : error {
  using error::error;
};

/// Numerical failure (quadrature non-convergence, singular system, ...).
struct numerical_error : error {
  using error::error;
};

/// Malformed input data (CSV parse failures and the like).
struct parse_error : error {
  using error::error;
};

}  // namespace smsn

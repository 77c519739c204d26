// Shared error types and small helpers.
#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace adavae {

// Shape/dimension mismatch; the message names the offending shapes.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated operation precondition (empty input, non-scalar loss, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data: corpora, labels, checkpoint containers.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Out-of-range token or label id.
struct IndexError : DataError {
  using DataError::DataError;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad command line or run configuration.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Round-trip-exact decimal formatting; used for logs and text exports so
// reruns can be compared byte for byte.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace adavae

#pragma once

#include <stdexcept>
#include <string>

namespace cdghmm {

/// Input data or configuration violates a documented contract.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Estimation hit a numerical dead end (singular block, empty state, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cdghmm

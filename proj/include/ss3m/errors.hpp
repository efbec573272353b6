#pragma once

#include <stdexcept>
#include <string>

namespace ss3m {

// Invalid configuration, hyperparameters or usage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array shapes that do not agree with each other.
class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// A persisted artifact written by an incompatible format version.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values, degenerate distributions, failed optimisation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ss3m

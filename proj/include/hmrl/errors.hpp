#pragma once

#include <stdexcept>
#include <string>

namespace hmrl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched vector/matrix/layout dimensions.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or file; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf detected in a gradient or parameter slice.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API used out of order (e.g. stepping a finished episode).
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmrl

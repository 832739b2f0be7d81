#pragma once

#include <stdexcept>
#include <string>

namespace czsl {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad or inconsistent configuration (unknown key, invalid value, missing file path).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Dataset-level problems: parse failures, invariant violations, missing samples.
class DataError : public Error {
public:
  using Error::Error;
};

/// Episode sampling gave up after the configured number of attempts.
class SamplerExhausted : public Error {
public:
  using Error::Error;
};

/// Numeric contract violations: non-finite values, non-scalar losses, bad distributions.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Tensor shape mismatch; the message names the offending operation.
class ShapeError : public NumericError {
public:
  using NumericError::NumericError;
};

}  // namespace czsl

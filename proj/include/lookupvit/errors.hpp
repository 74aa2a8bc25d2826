#pragma once

#include <stdexcept>
#include <string>

namespace lookupvit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A hyperparameter combination is invalid (e.g. compressed grid larger than the lookup grid).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A call violated an API precondition (non-scalar loss, stale attention weights, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A kernel produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unknown fields in a JSON config.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or unsupported binary file (checkpoint, dataset, PGM).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace lookupvit

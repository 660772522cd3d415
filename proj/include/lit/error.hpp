#pragma once

#include <stdexcept>
#include <string>

namespace lit {

// Base of every error raised by the library. The CLI maps each subclass to
// a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, or an op whose numeric contract cannot be met.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid model/stage configuration, preset name, CLI combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (dead tape, missing trace,
// uninitialized running statistics).
class StateError : public Error {
 public:
  using Error::Error;
};

// Caller-supplied data violates a documented contract.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File could not be read/written or is malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lit

#pragma once

#include <stdexcept>
#include <string>

namespace occmocap {

/// Base class for all library errors. The CLI maps each subclass to its own
/// exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent argument (shape mismatch, non-positive scale...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Bad experiment configuration or incompatible checkpoint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed input data (archives, detection files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A solver could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace occmocap

#pragma once

#include <stdexcept>
#include <string>

namespace srfm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid model, training or study configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller handed in data that violates an operation's preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes are incompatible with the requested rearrangement.
class ShapeError : public InputError {
 public:
  using InputError::InputError;
};

/// A loss or metric produced (or would produce) a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace srfm

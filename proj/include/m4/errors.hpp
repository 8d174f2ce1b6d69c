#pragma once

#include <stdexcept>
#include <string>

namespace m4 {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or convolution geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A bag (or any row-reduced matrix) with zero instances.
class EmptyBagError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, run configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Misuse of the tape: non-scalar loss, detached loss, repeated backward.
class AutodiffError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf reached a value or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary payloads. Subclasses distinguish the failure kind.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SizeOverflowError : public FormatError {
 public:
  using FormatError::FormatError;
};

// AUC requested on scores that contain only one class.
class UndefinedAucError : public Error {
 public:
  using Error::Error;
};

}  // namespace m4

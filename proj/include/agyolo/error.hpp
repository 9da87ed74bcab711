#pragma once

#include <stdexcept>
#include <string>

namespace agyolo {

// Base of every library error. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes or geometry that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid layer or architecture configuration (bad groups, unknown variant, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or mismatched file content (weights, PPM).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied data: labels, list files, anchor specs, thresholds.
class InputError : public Error {
 public:
  using Error::Error;
};

// Call-order violations, e.g. backward without a cached forward.
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace agyolo

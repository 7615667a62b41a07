#pragma once

#include <stdexcept>
#include <string>

namespace fedua {

// Every failure raised by the library derives from Error so callers (the CLI
// in particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid caller-supplied value (bad size, out-of-range probability, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Model or run configuration that cannot be realized.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong order (backward before forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

// Not enough warm-up data to reach the requested TPR.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. The message carries the offending line when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedua

#pragma once

#include <stdexcept>
#include <string>

namespace ncode {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MigrationError : public Error {
 public:
  using Error::Error;
};

/// Raised when an optimizer refuses a step; the optimizer state is untouched.
class OptimizerError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a collapsed step size. Carries the integration time.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, double time)
      : Error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

}  // namespace ncode

#pragma once

#include <stdexcept>
#include <string>

namespace setkkl {

// Base for everything the library throws. Numerical failures and config
// failures are kept apart so the CLI can map them to distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonFiniteState : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class BadRadii : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class UnknownExample : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NotHurwitz : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class NotControllable : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class EmptySet : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class LengthMismatch : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TooLarge : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SignalGap : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OrderTooHigh : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace setkkl

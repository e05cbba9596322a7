#pragma once

#include <stdexcept>
#include <string>

namespace dtsync {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Scenario or state violates a model invariant.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Scenario file or run configuration could not be parsed or validated.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Initial-value integration failed (non-finite derivative, step underflow).
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double t)
      : Error(what + " at t=" + std::to_string(t)), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

}  // namespace dtsync

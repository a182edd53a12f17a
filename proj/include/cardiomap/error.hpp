#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cardiomap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input or configuration. The CLI maps this to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Randomized generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite state in the time integrator. The CLI maps this to exit code 3.
class InstabilityError : public Error {
 public:
  InstabilityError(std::int64_t step, const std::string& what)
      : Error("numeric instability at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

}  // namespace cardiomap

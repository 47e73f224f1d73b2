#pragma once

#include <stdexcept>
#include <string>

namespace hyperkkl {

/// Base of every error raised by the library. `exit_code()` is the value the
/// CLI returns when the error escapes a command.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Caller broke a precondition (dimension mismatch, empty input, bad layout).
class ContractViolation : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// User-facing configuration problem: bad flag, conflicting config key, missing
/// checkpoint for a requested variant.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A computation produced or received a non-finite value.
class NumericDomainError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Simulated trajectory left the admissible region.
class DivergenceError : public NumericDomainError {
 public:
  DivergenceError(const std::string& what, long step)
      : NumericDomainError(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// A check that holds by construction failed.
class InternalError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace hyperkkl

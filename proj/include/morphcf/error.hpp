#pragma once

#include <stdexcept>
#include <string>

namespace morphcf {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical failure (NaN loss, degenerate statistic, ...). Maps to CLI exit code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class UndefinedStatistic : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class FitError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TrainingError : public NumericalError {
 public:
  TrainingError(const std::string& what, long step) : NumericalError(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

enum class IoErrorKind { open_failed, bad_magic, unsupported_dtype, truncated, bad_header };

inline const char* to_string(IoErrorKind k) {
  switch (k) {
    case IoErrorKind::open_failed: return "open_failed";
    case IoErrorKind::bad_magic: return "bad_magic";
    case IoErrorKind::unsupported_dtype: return "unsupported_dtype";
    case IoErrorKind::truncated: return "truncated";
    case IoErrorKind::bad_header: return "bad_header";
  }
  return "unknown";
}

class IoError : public Error {
 public:
  IoError(IoErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

class CyclicGraphError : public Error {
 public:
  using Error::Error;
};

class IncompleteObservation : public Error {
 public:
  using Error::Error;
};

/// A phantom request cannot be rendered inside the available shell.
class CapacityError : public Error {
 public:
  using Error::Error;
};

}  // namespace morphcf

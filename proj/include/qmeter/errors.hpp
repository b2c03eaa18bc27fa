#pragma once

#include <stdexcept>
#include <string>

namespace qmeter {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A physical parameter is outside its admissible range.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a declared validation rule (grid coverage, schedule order, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class InvalidKernelError : public Error {
 public:
  using Error::Error;
};

/// A quantity that must be real came out with an imaginary residue above tolerance,
/// or an internal identity check failed.
class NumericalConsistencyError : public Error {
 public:
  using Error::Error;
};

class SingularPhaseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class PoleError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Population leaked to the edge of a truncated basis.
class TruncationError : public Error {
 public:
  using Error::Error;
};

class ComplexityError : public Error {
 public:
  using Error::Error;
};

/// Experiment configuration problem; `path()` names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace qmeter

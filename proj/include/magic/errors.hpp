#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace magic {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller passed a value outside an operation's contract (non-positive
/// hyperparameter, dimension mismatch, point outside a knot span, ...).
class InvalidArgument : public Error {
public:
  using Error::Error;
};

class DomainError : public InvalidArgument {
public:
  using InvalidArgument::InvalidArgument;
};

/// Linear algebra or optimization could not produce a finite answer.
class NumericalError : public Error {
public:
  using Error::Error;
};

class SingularMatrixError : public NumericalError {
public:
  SingularMatrixError(const std::string& what, double attempted_jitter)
      : NumericalError(what), jitter_(attempted_jitter) {}
  double attempted_jitter() const noexcept { return jitter_; }

private:
  double jitter_;
};

class OptimizerError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// The data cannot support the requested fit or metric (single class,
/// empty series, too few samples, malformed input files).
class DataError : public Error {
public:
  using Error::Error;
};

class DegenerateLabelsError : public DataError {
public:
  using DataError::DataError;
};

/// Malformed file content. `location` is a 1-based line number for text
/// tables or a byte offset for checkpoints, as stated in the message.
class ParseError : public DataError {
public:
  ParseError(const std::string& what, std::size_t location)
      : DataError(what), location_(location) {}
  std::size_t location() const noexcept { return location_; }

private:
  std::size_t location_;
};

class UnsupportedVersionError : public DataError {
public:
  using DataError::DataError;
};

} // namespace magic

#pragma once

#include <stdexcept>
#include <string>

namespace vsearch {

/// Root of every error thrown by the library. The CLI maps subclasses onto
/// exit codes, so keep the hierarchy flat.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid display or sweep configuration (set size beyond capacity, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Shape or length mismatch between arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Model file missing, corrupt or producing unexpected shapes.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Non-finite activations or statistics.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Zero pooled variance in the Gaussian shortcut.
class DegenerateDistributionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent tabular data (duplicates, missing cells).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Parse failure with a 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vsearch

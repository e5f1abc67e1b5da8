#pragma once

#include <stdexcept>
#include <string>

namespace siamssl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad magic number, truncated header, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Inputs that are individually well formed but disagree with each other.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Layer chain that cannot be assembled for the declared input shape.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or singular systems.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Graph with an isolated vertex; `row()` names the offending vertex.
class DegeneracyError : public Error {
 public:
  DegeneracyError(const std::string& what, long row) : Error(what), row_(row) {}
  long row() const noexcept { return row_; }

 private:
  long row_;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Run configuration problem. `line()` is 0 when the error is not tied to a line.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, int line = 0) : Error(what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace siamssl

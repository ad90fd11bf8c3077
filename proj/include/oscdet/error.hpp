#pragma once

#include <stdexcept>
#include <string>

namespace oscdet {

// Base of every exception thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or argument (exit code 1 in the CLI).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor extents that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or insufficient input data: CSV, annotations, datasets (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf escaped a computation or training diverged (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Model file problems.
class FormatError : public DataError {
 public:
  enum class Kind { io, bad_magic, unsupported_version, truncated, checksum, descriptor };

  FormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace oscdet

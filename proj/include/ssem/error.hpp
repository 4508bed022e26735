#pragma once

#include <stdexcept>
#include <string>

namespace ssem {

/// Base class of everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration document.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Binary container problems. The kind lets callers distinguish diagnostics.
class FormatError : public Error {
 public:
  enum class Kind { bad_magic, unsupported_version, truncated, shape_overflow, fingerprint_mismatch, malformed };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace ssem

#pragma once

#include <stdexcept>
#include <string>

namespace injop {

/// Base class for every error raised by the library. The message is prefixed
/// with the module that raised it, e.g. "funcspace: grid mismatch".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Array shapes, channel counts or grids do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Grid too coarse for the requested truncation order (M < 8N).
class AliasingError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A matrix that must be invertible is singular to working tolerance.
class SingularError : public Error {
 public:
  using Error::Error;
};

/// A fixed-point iteration left its basin (residual grew for too long).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A randomized construction failed its empirical verification.
class VerificationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or configuration.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace injop

#pragma once

#include <stdexcept>
#include <string>

namespace densegen {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatched data on disk or in memory.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Missing or unreadable file.
class FileError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (NaN or infinite loss).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace densegen

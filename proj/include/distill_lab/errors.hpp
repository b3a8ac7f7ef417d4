#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace distill_lab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// backward() called on a non-scalar tensor.
class RankError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Invalid scalar hyper-parameter (temperature, learning rate, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

class BatchSizeError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer/network/dataset specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent combination of models and settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a value, gradient or loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { io, malformed, truncated, checksum, version_mismatch, topology_mismatch };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace distill_lab

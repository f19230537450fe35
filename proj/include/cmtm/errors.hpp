#pragma once

#include <stdexcept>
#include <string>

namespace cmtm {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatch between tensors.
class DimError : public Error {
 public:
  explicit DimError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration value (ratio out of range, indivisible sizes, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// API misuse (non-scalar loss, reused tape, empty metric list, ...).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Non-finite values where finite ones are required (diverged training).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// File I/O and container-format failures. `kind` distinguishes the
// structural failure modes so callers can react to each one.
class IoError : public Error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, malformed };

  IoError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace cmtm

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace cigmae {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter or architecture combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value or an undefined numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid precondition on data (class populations, empty inputs, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// File-format failures. `code()` distinguishes the failure class.
class FormatError : public Error {
 public:
  enum class Code { io, bad_magic, bad_version, truncated, shape_mismatch, bad_label, integrity, config_mismatch };

  FormatError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

namespace detail {
[[noreturn]] inline void throw_dim(const std::string& what) { throw DimensionError(what); }
}  // namespace detail

}  // namespace cigmae

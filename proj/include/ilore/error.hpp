// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ilore {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch between operands; the message names the op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Timestamps went backwards.
class OrderingError : public Error {
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

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A statistic that has no value for the given input (e.g. AP with no positives).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

}  // namespace ilore

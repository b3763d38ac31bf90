#pragma once

#include <stdexcept>
#include <string>

namespace condlane {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor or feature dimensions that do not fit the operation.
struct ShapeError : Error {
  using Error::Error;
};

// Caller broke a documented precondition (e.g. non-normalized distribution).
struct ContractViolation : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct DegenerateLaneError : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  int line_number;
};

struct FormatError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

}  // namespace condlane

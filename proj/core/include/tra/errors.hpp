#pragma once

#include <stdexcept>
#include <string>

namespace tra {

// All library failures derive from Error and carry a short category tag so
// the CLI can emit single-line machine-parsable diagnostics
// ("error: <category>: <message>").
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

// Malformed call: shape mismatch, non-finite input, unsorted input, ...
class InvalidArgumentError : public Error {
 public:
  explicit InvalidArgumentError(const std::string& msg) : Error("invalid-argument", msg) {}
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// File-level syntax problems (CSV schema, checkpoint format).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error("parse", msg) {}
};

// Semantically broken data (duplicate keys, inconsistent panels).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data", msg) {}
};

// Lookup of an entity that was never registered (e.g. unknown stock id).
class MissingEntityError : public Error {
 public:
  explicit MissingEntityError(const std::string& msg) : Error("missing-entity", msg) {}
};

// Numerical breakdown (NaN/Inf reaching a boundary that requires finiteness).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// Instance exceeds the documented scale of an exact/oracle routine.
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& msg) : Error("size", msg) {}
};

// I/O failures (missing files, unwritable output directories).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

}  // namespace tra

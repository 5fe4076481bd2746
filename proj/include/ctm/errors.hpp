#pragma once

#include <stdexcept>
#include <string>

namespace ctm {

// Broad failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kConfig,     // bad settings, empty inputs, impossible generation specs
  kData,       // unreadable files, malformed corpus lines, overlong inputs
  kInternal,   // broken contracts and invariants inside the library
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::kConfig, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

// Malformed corpus line; carries the 1-based line number.
class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A formatted input does not fit the configured maximum sequence length.
class LengthError : public DataError {
 public:
  explicit LengthError(const std::string& what) : DataError(what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what)
      : Error(ErrorKind::kInternal, what) {}
};

class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& what) : ContractError(what) {}
};

class IndexError : public ContractError {
 public:
  explicit IndexError(const std::string& what) : ContractError(what) {}
};

// A hard invariant (e.g. gradient reaching a frozen backbone) was violated.
class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what)
      : Error(ErrorKind::kInternal, what) {}
};

}  // namespace ctm

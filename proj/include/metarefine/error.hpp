#pragma once

#include <stdexcept>
#include <string>

namespace metarefine {

/// Broad failure classes. The CLI maps each to a distinct exit status.
enum class ErrorKind { usage, config, shape, numeric, data, parse, io, divergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& w) : Error(ErrorKind::usage, "usage error: " + w) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& w) : Error(ErrorKind::config, "configuration error: " + w) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& w) : Error(ErrorKind::shape, "shape error: " + w) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& w) : Error(ErrorKind::numeric, "numeric error: " + w) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& w) : Error(ErrorKind::data, "data error: " + w) {}
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& w)
      : Error(ErrorKind::parse, "parse error at line " + std::to_string(line) + ": " + w), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& w) : Error(ErrorKind::io, "I/O error: " + w) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& w) : Error(ErrorKind::divergence, "training diverged: " + w) {}
};

}  // namespace metarefine

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace topical_gibbs {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto exit codes (config 1, data 2, numerical 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A distribution or operation was called outside its parameter domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries the 1-based line number (0 when unknown).
class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Cholesky breakdown; `pivot` is the 0-based index of the first
// non-positive pivot.
class FactorizationError : public NumericalError {
 public:
  FactorizationError(std::ptrdiff_t pivot, const std::string& what)
      : NumericalError(what + " (non-positive pivot at index " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}

  std::ptrdiff_t pivot() const noexcept { return pivot_; }

 private:
  std::ptrdiff_t pivot_;
};

}  // namespace topical_gibbs

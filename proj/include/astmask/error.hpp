#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace astmask {

/// Input or schema problem the caller can fix (CLI exit code 1).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while running a pipeline stage on valid input (CLI exit code 2).
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public ValidationError {
 public:
  SyntaxError(const std::string& what, std::size_t line, std::size_t column)
      : ValidationError(std::to_string(line) + ":" + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace astmask

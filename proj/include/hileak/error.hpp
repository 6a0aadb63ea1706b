#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hileak {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// Assembly source that cannot be parsed. Carries the 1-based source line.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Fault raised while emulating a program (bad memory access, stack underflow).
class ExecutionError : public Error {
  public:
    using Error::Error;
};

} // namespace hileak

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace leashsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index or value outside its permitted range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Thread looked up in a runqueue it is not part of.
class MembershipError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value (e.g. a ratio outside (0,1)).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated internal invariant, such as logging into a full HPC buffer.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : Error(source + (line > 0 ? ":" + std::to_string(line) : std::string{}) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

}  // namespace leashsim

#pragma once

#include <cstddef>
#include <iostream>
#include <stdexcept>
#include <string>

namespace sngp {

/// Bad caller input: shapes, ranges, malformed parameters.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called on an object in the wrong lifecycle state
/// (predicting with an untrained model, finalizing twice, ...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Factorization failures and other numerical breakdowns.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text-format parse failure. `line()` is 1-based, 0 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

inline void warn(const std::string& msg) { std::clog << "warning: " << msg << '\n'; }

}  // namespace sngp

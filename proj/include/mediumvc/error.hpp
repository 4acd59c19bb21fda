#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mvc {

enum class ErrorCategory {
  Range,
  Format,
  Config,
  Validation,
  Shape,
  Length,
  Io,
  Lookup,
  Numeric,
  Unsupported,
};

/// Upper-case tag used as the machine-parsable prefix on CLI failures.
std::string_view category_tag(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

  /// "RANGE/semitones outside [-6,4]" style single line.
  std::string tagged() const;

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& message) {
  throw Error(c, message);
}

}  // namespace mvc

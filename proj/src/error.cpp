#include "mediumvc/error.hpp"

namespace mvc {

std::string_view category_tag(ErrorCategory c) noexcept {
  switch (c) {
    case ErrorCategory::Range: return "RANGE";
    case ErrorCategory::Format: return "FORMAT";
    case ErrorCategory::Config: return "CONFIG";
    case ErrorCategory::Validation: return "VALIDATION";
    case ErrorCategory::Shape: return "SHAPE";
    case ErrorCategory::Length: return "LENGTH";
    case ErrorCategory::Io: return "IO";
    case ErrorCategory::Lookup: return "LOOKUP";
    case ErrorCategory::Numeric: return "NUMERIC";
    case ErrorCategory::Unsupported: return "UNSUPPORTED";
  }
  return "ERROR";
}

std::string Error::tagged() const {
  std::string out(category_tag(category_));
  out += '/';
  out += what();
  return out;
}

}  // namespace mvc

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polarsfp {

enum class ErrorCode {
  DegenerateSampling,
  ZeroIntensity,
  DomainError,
  OutOfRange,
  EmptyMask,
  InsufficientViews,
  EmptyIntersection,
  ShapeMismatch,
  MalformedHeader,
  TruncatedData,
  SchemaError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateSampling: return "DegenerateSampling";
    case ErrorCode::ZeroIntensity: return "ZeroIntensity";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::InsufficientViews: return "InsufficientViews";
    case ErrorCode::EmptyIntersection: return "EmptyIntersection";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace polarsfp

#pragma once

#include <stdexcept>
#include <string>

namespace cdpad {

enum class ErrorCode {
  ShapeMismatch,
  InvalidArgument,
  Config,
  Format,
  State,
  Data,
  Io,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Config: return "config";
    case ErrorCode::Format: return "format";
    case ErrorCode::State: return "state";
    case ErrorCode::Data: return "data";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

/// Error with a machine-readable code; everything user-facing funnels
/// through this so the CLI can map failures to a nonzero exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace cdpad

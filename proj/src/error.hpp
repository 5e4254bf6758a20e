#pragma once

#include <stdexcept>
#include <string>

namespace despeck {

// Mirrors the status codes of the C API (despecknet.h).
enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Format = 3,
  Numeric = 4,
  State = 5,
  Internal = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::State: return "state";
    case ErrorCode::Internal: return "internal";
  }
  return "internal";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(ErrorCode::InvalidArgument, msg);
}

}  // namespace despeck

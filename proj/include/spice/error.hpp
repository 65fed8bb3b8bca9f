#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spice {

enum class ErrorCode {
  bad_request,          // invalid argument, config or input data
  not_found,            // missing session, step or file
  conflict,             // busy session, chain mismatch
  backend_unavailable,  // transport failure talking to a backend/embedder
  io,                   // filesystem failure
  contract,             // backend response violates the denoise contract
  cancelled,
  internal,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::backend_unavailable: return "backend_unavailable";
    case ErrorCode::io: return "io";
    case ErrorCode::contract: return "contract";
    case ErrorCode::cancelled: return "cancelled";
    case ErrorCode::internal: return "internal";
  }
  return "internal";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, bool retryable = false, int attempts = 0)
      : std::runtime_error(message), code_(code), retryable_(retryable), attempts_(attempts) {}

  ErrorCode code() const noexcept { return code_; }
  bool retryable() const noexcept { return retryable_; }
  // Number of transport attempts made before giving up (HTTP backends only).
  int attempts() const noexcept { return attempts_; }

 private:
  ErrorCode code_;
  bool retryable_;
  int attempts_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(ErrorCode::bad_request, message);
}

}  // namespace spice

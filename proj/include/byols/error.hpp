#pragma once

#include <stdexcept>
#include <string>

namespace byols {

/// Exit codes used by the command line tool; every thrown Error carries one.
enum class ErrorCode : int {
  kInvalidArgument = 2,
  kIo = 3,
  kFormat = 4,
  kIntegrity = 5,
  kDivergence = 6,
  kConfig = 7,
  kStage = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIntegrity: return "integrity";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kStage: return "stage";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what, ErrorCode code = ErrorCode::kInvalidArgument) {
  if (!cond) fail(code, what);
}

}  // namespace byols

#pragma once

#include <stdexcept>
#include <string>

namespace levo {

enum class ErrorCode {
  kInvalidArgument = 1,
  kShapeMismatch,
  kNonFinite,
  kUnsupported,
  kBadMagic,
  kVersionMismatch,
  kTruncatedPayload,
  kIo,
  kConfig,
  kContextOverflow,
  kUnreachableTarget,
  kRuntime,
};

const char* error_code_name(ErrorCode code);

// Single exception type for the library; the C API maps `code()` onto
// levo_status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void check(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace levo

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ncl {

enum class ErrorCode {
  kInvalidArgument,
  kImbalanceFactorBelowOne,
  kTailCountBelowOne,
  kNonFinite,
  kShapeMismatch,
  kNotNormalized,
  kOutOfRange,
  kBatchTooLarge,
  kIo,
  kFormat,
  kNonFiniteLoss,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers (and tests)
// can tell distinct preconditions apart without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace ncl

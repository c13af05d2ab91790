#include "ncl/error.hpp"

namespace ncl {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kImbalanceFactorBelowOne: return "imbalance_factor_below_one";
    case ErrorCode::kTailCountBelowOne: return "tail_count_below_one";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kNotNormalized: return "not_normalized";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kBatchTooLarge: return "batch_too_large";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kNonFiniteLoss: return "non_finite_loss";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace ncl

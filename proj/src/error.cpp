#include "graad/error.hpp"

namespace graad {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kInvalidMask: return "invalid_mask";
    case ErrorCode::kUntrackedTensor: return "untracked_tensor";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kEmptySequence: return "empty_sequence";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kInfeasible: return "infeasible";
    case ErrorCode::kLength: return "length";
    case ErrorCode::kIndex: return "index";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kChecksum: return "checksum";
  }
  return "unknown";
}

}  // namespace graad

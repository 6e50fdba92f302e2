#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace graad {

enum class ErrorCode {
  kDimension,
  kInvalidMask,
  kUntrackedTensor,
  kPrecondition,
  kEmptySequence,
  kParse,
  kFormat,
  kInfeasible,
  kLength,
  kIndex,
  kIo,
  kChecksum,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; the CLI maps the code to
// its machine-readable stderr payload.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace graad

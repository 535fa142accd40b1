#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chiefray {

enum class ErrorCode {
  kInvalidArgument,
  kBehindProjector,
  kDegenerateHomography,
  kStackMismatch,
  kMissingCode,
  kEmptyField,
  kOverlappingBlobs,
  kOverClustered,
  kGridNotFound,
  kNotAnEllipse,
  kDegenerateCircle,
  kInsufficientView,
  kClosedFormFailed,
  kLmFailed,
  kPnpDegenerate,
  kValidation,
  kSchema,
  kIo,
  kStaleChecksum,
};

// Stable kebab-case identifier, e.g. "behind-projector".
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace chiefray

#pragma once

#include <stdexcept>
#include <string>

namespace faithdec {

enum class ErrorCode {
  kInvalidArgument,
  kRange,
  kParse,
  kNormalization,
  kDimension,
  kNotFound,
  kZeroVector,
  kPrecondition,
  kBackendUnavailable,
  kBackend,
  kProtocol,
  kService,
  kEmptyResponse,
  kTooFewTags,
  kRender,
  kIo,
};

const char* error_code_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// C boundary and the CLI can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace faithdec

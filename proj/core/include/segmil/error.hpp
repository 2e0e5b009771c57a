#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace segmil {

enum class ErrorCode {
  kClipTooShort,
  kInvalidRate,
  kInvalidRange,
  kInvalidConfig,
  kShapeMismatch,
  kUtteranceTooShort,
  kEmptyBag,
  kDegenerateData,
  kEmptyClass,
  kMissingField,
  kFoldMismatch,
  kParseError,
  kDuplicateId,
  kNotFound,
  kCorruptStore,
  kIoError,
  kUnsupportedFormat,
};

std::string_view ToString(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can name the failing stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ToString(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace segmil

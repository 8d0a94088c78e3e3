#pragma once

#include <stdexcept>
#include <string>

namespace tonel {

enum class ErrorCode {
  // file formats
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedPayload,
  kNonFiniteValue,
  kIoFailure,
  // data joins / labels
  kIdMismatch,
  kLengthMismatch,
  kMissingLabels,
  kBadLabel,
  kMissingText,
  // numeric inputs
  kEmptyVector,
  kNonFiniteInput,
  kShapeMismatch,
  kStaleCache,
  kDivergedTraining,
  // clustering / retrieval
  kKTooLarge,
  kKTooSmall,
  kDegenerateData,
  kQueryMismatch,
  kRankDeficient,
  // configuration
  kBadConfig,
};

class TonelError : public std::runtime_error {
 public:
  TonelError(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw TonelError(code, msg);
}

}  // namespace tonel

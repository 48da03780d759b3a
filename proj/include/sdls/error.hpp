#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdls {

enum class ErrorCode {
  kInvalidArgument,
  kNonFinite,
  kZeroVariance,
  kZeroVector,
  kNotOrthonormal,
  kDegenerate,
  kConfig,
  kParse,
  kInvariant,
  kEmptyCorpus,
  kUnclassifiable,
  kVocabulary,
  kCancellation,
  kPlan,
  kPlanConflict,
  kGeometry,
  kPairing,
  kSubset,
  kInsufficientClasses,
  kImpossible,
  kChecksum,
  kTruncated,
  kUndefinedRate,
  kSingularDesign,
  kTraining,
  kIo,
  kInternal,
};

std::string_view error_code_name(ErrorCode code);

// Validation-class errors map to CLI exit code 2; kTraining, kIo and
// kInternal are internal failures (exit 1).
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sdls

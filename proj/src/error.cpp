#include "sdls/error.hpp"

namespace sdls {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kZeroVariance: return "zero_variance";
    case ErrorCode::kZeroVector: return "zero_vector";
    case ErrorCode::kNotOrthonormal: return "not_orthonormal";
    case ErrorCode::kDegenerate: return "degenerate";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kInvariant: return "invariant";
    case ErrorCode::kEmptyCorpus: return "empty_corpus";
    case ErrorCode::kUnclassifiable: return "unclassifiable";
    case ErrorCode::kVocabulary: return "vocabulary";
    case ErrorCode::kCancellation: return "cancellation";
    case ErrorCode::kPlan: return "plan";
    case ErrorCode::kPlanConflict: return "plan_conflict";
    case ErrorCode::kGeometry: return "geometry";
    case ErrorCode::kPairing: return "pairing";
    case ErrorCode::kSubset: return "subset";
    case ErrorCode::kInsufficientClasses: return "insufficient_classes";
    case ErrorCode::kImpossible: return "impossible";
    case ErrorCode::kChecksum: return "checksum";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kUndefinedRate: return "undefined_rate";
    case ErrorCode::kSingularDesign: return "singular_design";
    case ErrorCode::kTraining: return "training";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

bool is_validation_error(ErrorCode code) {
  return code != ErrorCode::kTraining && code != ErrorCode::kIo && code != ErrorCode::kInternal;
}

}  // namespace sdls

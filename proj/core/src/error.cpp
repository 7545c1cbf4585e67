#include "zori/error.hpp"

namespace zori {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroNormRow: return "ZeroNormRow";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kEmptyMask: return "EmptyMask";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kTooFewClasses: return "TooFewClasses";
    case ErrorCode::kKOutOfRange: return "KOutOfRange";
    case ErrorCode::kEmptyTemplateList: return "EmptyTemplateList";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kBadCount: return "BadCount";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kInsufficientInstances: return "InsufficientInstances";
    case ErrorCode::kMissingUnseenClass: return "MissingUnseenClass";
    case ErrorCode::kEmptyBank: return "EmptyBank";
    case ErrorCode::kClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::kNotAProbabilityVector: return "NotAProbabilityVector";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kBothEmpty: return "BothEmpty";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kUnknownDataset: return "UnknownDataset";
    case ErrorCode::kSplitMismatch: return "SplitMismatch";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kDoesNotFit: return "DoesNotFit";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

}  // namespace zori

#include "procua/error.hpp"

namespace procua {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParams: return "InvalidParams";
    case ErrorCode::kIo: return "IoError";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kCorruptRecord: return "CorruptRecord";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kSuiteMismatch: return "SuiteMismatch";
    case ErrorCode::kTerminalStateStep: return "TerminalStateStep";
    case ErrorCode::kStepBudgetExhausted: return "StepBudgetExhausted";
    case ErrorCode::kEmptyCandidates: return "EmptyCandidates";
    case ErrorCode::kCandidateNotInSupport: return "CandidateNotInSupport";
    case ErrorCode::kGroupTooSmall: return "GroupTooSmall";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kPrecondition: return "PreconditionViolation";
  }
  return "Unknown";
}

}  // namespace procua

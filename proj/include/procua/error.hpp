#pragma once

#include <stdexcept>
#include <string>

namespace procua {

enum class ErrorCode {
  kInvalidParams,
  kIo,
  kVersionMismatch,
  kCorruptRecord,
  kConfig,
  kSuiteMismatch,
  kTerminalStateStep,
  kStepBudgetExhausted,
  kEmptyCandidates,
  kCandidateNotInSupport,
  kGroupTooSmall,
  kDimensionMismatch,
  kMalformedResponse,
  kPrecondition,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries a code so the CLI can map it
// onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, std::string(to_string(code)) + ": " + what);
}

}  // namespace procua

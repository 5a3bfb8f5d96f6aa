#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dyind {

enum class ErrorCode {
  kSamplingExhausted,
  kEmptyInput,
  kEmptyPool,
  kInvalidProb,
  kInvalidArgument,
  kStuck,
  kEnumerationTooLarge,
  kNoCandidatePasses,
  kTokenOutOfVocab,
  kDivergence,
  kEmptyTrainset,
  kFormatMismatch,
  kIo,
  kNoFaithfulMachine,
  kTooManyStates,
  kNonstandardAccepting,
  kParseError,
  kDuplicateEdge,
  kNotAChain,
  kMalformedGeneration,
  kStaleState,
  kNameExhausted,
  kMissingLevel,
  kWeightMismatch,
  kMissingRun,
  kMissingArtifact,
};

std::string_view error_code_name(ErrorCode code);

// Every failure surfaces as this exception; what() is "<CODE>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace dyind

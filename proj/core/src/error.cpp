#include "dyind/error.hpp"

namespace dyind {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSamplingExhausted: return "SAMPLING_EXHAUSTED";
    case ErrorCode::kEmptyInput: return "EMPTY_INPUT";
    case ErrorCode::kEmptyPool: return "EMPTY_POOL";
    case ErrorCode::kInvalidProb: return "INVALID_PROB";
    case ErrorCode::kInvalidArgument: return "INVALID_ARGUMENT";
    case ErrorCode::kStuck: return "STUCK";
    case ErrorCode::kEnumerationTooLarge: return "ENUMERATION_TOO_LARGE";
    case ErrorCode::kNoCandidatePasses: return "NO_CANDIDATE_PASSES";
    case ErrorCode::kTokenOutOfVocab: return "TOKEN_OUT_OF_VOCAB";
    case ErrorCode::kDivergence: return "DIVERGENCE";
    case ErrorCode::kEmptyTrainset: return "EMPTY_TRAINSET";
    case ErrorCode::kFormatMismatch: return "FORMAT_MISMATCH";
    case ErrorCode::kIo: return "IO";
    case ErrorCode::kNoFaithfulMachine: return "NO_FAITHFUL_MACHINE";
    case ErrorCode::kTooManyStates: return "TOO_MANY_STATES";
    case ErrorCode::kNonstandardAccepting: return "NONSTANDARD_ACCEPTING";
    case ErrorCode::kParseError: return "PARSE_ERROR";
    case ErrorCode::kDuplicateEdge: return "DUPLICATE_EDGE";
    case ErrorCode::kNotAChain: return "NOT_A_CHAIN";
    case ErrorCode::kMalformedGeneration: return "MALFORMED_GENERATION";
    case ErrorCode::kStaleState: return "STALE_STATE";
    case ErrorCode::kNameExhausted: return "NAME_EXHAUSTED";
    case ErrorCode::kMissingLevel: return "MISSING_LEVEL";
    case ErrorCode::kWeightMismatch: return "WEIGHT_MISMATCH";
    case ErrorCode::kMissingRun: return "MISSING_RUN";
    case ErrorCode::kMissingArtifact: return "MISSING_ARTIFACT";
  }
  return "UNKNOWN";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code),
      detail_(message) {}

}  // namespace dyind

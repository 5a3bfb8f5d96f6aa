#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dyind/fsa.hpp"
#include "dyind/rnn.hpp"

namespace dyind {

// Token ids: letters a-z = 0..25, A-Z = 26..51, then the punctuation below.
namespace tok {
inline constexpr int kOpen = 52;
inline constexpr int kClose = 53;
inline constexpr int kHash = 54;
inline constexpr int kNewState = 55;  // <ns>
inline constexpr int kSep = 56;
inline constexpr int kEos = 57;
inline constexpr int kPad = 58;
inline constexpr int kLetters = 52;
}  // namespace tok

inline constexpr std::size_t kModelVocab = 58;  // output classes
inline constexpr std::size_t kInputVocab = 59;  // plus PAD

bool is_letter(int token);
char letter_char(int token);
int letter_token(char c);  // -1 if not a letter
std::string token_text(int token);
// Throws PARSE_ERROR for an unknown token.
int token_id(std::string_view text);

std::string tokens_to_text(const std::vector<int>& tokens);
// Whitespace-separated; PAD is never legal in text.
std::vector<int> tokens_from_text(std::string_view text);

// Letter per state index; injective.
struct NamingMap {
  std::vector<int> letter;  // token id per state

  static NamingMap random(std::size_t n_states, Rng& rng);
  static NamingMap from_string(std::string_view letters);  // "ac" -> q0=a, q1=c
};

struct SymbolicEncoding {
  std::vector<int> tokens;
  std::string text() const { return tokens_to_text(tokens); }
};

// Initial-state name, then "# src sym dst" triples. The canonical order walks
// states breadth-first and lists a state's ")" edge before its "(" edge, which
// for a chain yields "a # a ( b # b ) a # b ( c # c ) b ...".
// Throws TOO_MANY_STATES (> 52) and NONSTANDARD_ACCEPTING.
SymbolicEncoding encode_fsa(const Fsa& fsa, const NamingMap& naming, bool shuffle, Rng& rng);
SymbolicEncoding encode_fsa(const Fsa& fsa, const NamingMap& naming);

// Accepting = {initial}; states are named by their letters in order of first
// appearance. Throws PARSE_ERROR (with token position) and DUPLICATE_EDGE.
Fsa decode_encoding(const std::vector<int>& tokens);

struct TrainingInstance {
  std::vector<int> tokens;
  std::vector<bool> loss_mask;  // true strictly after <sep>, through <eos>

  std::string text() const { return tokens_to_text(tokens); }
  LmExample example() const { return {tokens, loss_mask}; }
};

// Throws PARSE_ERROR unless the sequence has exactly one <sep> followed
// eventually by a final <eos>.
TrainingInstance instance_from_tokens(std::vector<int> tokens);

// The unique state without a "(" edge; throws NOT_A_CHAIN.
int deepest_state(const Fsa& fsa);

// "prefix <sep> # t ( <ns> # <ns> ) t <eos>" for the deepest state t under a
// random naming. Throws NOT_A_CHAIN, TOO_MANY_STATES (> 51).
TrainingInstance build_instance(const Fsa& fsa_k, Rng& rng, bool shuffle);
TrainingInstance build_instance(const Fsa& fsa_k, const NamingMap& naming, Rng& rng, bool shuffle);

// n_per_step instances of counter_fsa(k) for each k in `steps`.
std::vector<TrainingInstance> build_training_set(const std::vector<int>& steps, int n_per_step, bool shuffle, Rng& rng);

inline constexpr std::size_t kMaxGeneratedTokens = 64;

// Encodes `fsa` under a fresh naming, decodes greedily after <sep>, binds the
// two <ns> tokens to one new state and merges the new triples. A 52-state
// input still works (the prompt uses every letter); beyond that the prompt
// cannot be written and NAME_EXHAUSTED is thrown.
// Throws MALFORMED_GENERATION, STALE_STATE, NAME_EXHAUSTED.
Fsa apply_ind(const RnnParams& lm, const Fsa& fsa, Rng& rng, bool shuffle = false);

// Successive applications; an error carries the 1-based failing iteration.
std::vector<Fsa> apply_ind_iter(const RnnParams& lm, const Fsa& fsa, int times, Rng& rng, bool shuffle = false);

void write_instances(const std::vector<TrainingInstance>& instances, const std::filesystem::path& path);
std::vector<TrainingInstance> read_instances(const std::filesystem::path& path);

}  // namespace dyind

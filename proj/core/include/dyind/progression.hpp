#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dyind/dyck.hpp"
#include "dyind/rng.hpp"

namespace dyind {

struct PfstRule {
  int src = 0;
  std::optional<Symbol> input;  // nullopt is an epsilon rule
  BracketString output;
  int dst = 0;
  double prob = 1.0;
};

// Probabilistic finite-state transducer over {'(', ')'}.
//
// At a state with both epsilon rules and rules for the next input symbol the
// two groups are taken with probability 1/2 each, then a rule is chosen by its
// probability inside the group. At end of input a state halts unless it has
// only epsilon rules, in which case one of them must fire.
struct Pfst {
  std::vector<std::string> states;
  int initial = 0;
  std::vector<PfstRule> rules;

  std::vector<Symbol> in_alphabet() const;
  std::vector<Symbol> out_alphabet() const;

  // Every (state, input) group sums to 1 within 1e-12. Throws INVALID_PROB.
  void validate() const;
};

// Two states; q0 loops on each symbol with p = x, jumps to q1 with 1 - x, and
// q1 emits "()" on epsilon back to q0. Throws INVALID_PROB unless 0 < x <= 1.
Pfst pfst_fig_a1(double x = 0.8);

// Throws STUCK when no rule applies.
BracketString apply_pfst(const Pfst& t, const BracketString& s, Rng& rng);

struct OutputDistribution {
  std::map<BracketString, double> probs;
  double lost_mass = 0.0;  // stuck paths and outputs beyond the length cap
};

struct EnumerationLimits {
  std::size_t max_input_len = 24;
  std::size_t max_output_len = 256;
  std::size_t max_configs = 4'000'000;
};

// Exact output distribution by enumerating every rule choice. Throws
// ENUMERATION_TOO_LARGE when the input or the frontier exceeds the limits.
OutputDistribution pfst_output_distribution(const Pfst& t, const BracketString& s,
                                            const EnumerationLimits& limits = {});

struct SuccCheckReport {
  int level = 0;         // source level k
  int target_level = 0;  // k + 1, or k + stride for subsequences
  bool support_covered = false;
  bool support_exceeded = false;
  double total_variation = 1.0;
  int max_len = 0;
  std::vector<BracketString> uncovered;  // target strings with no pushed mass
  std::vector<BracketString> exceeding;  // pushed strings outside the target language
};

// Pushes the source pool's valid-string distribution (length <= max_len)
// through t and compares against the target pool's valid strings.
SuccCheckReport check_eq1(const Pfst& t, const Dataset& pool_k, const Dataset& pool_k1, int max_len);

struct TransducerComplexity {
  int alphabet_count = 0;
  int state_count = 0;
  int rule_count = 0;
  int total = 0;
};
TransducerComplexity complexity(const Pfst& t);

struct ConstGapReport {
  std::size_t winner = 0;
  TransducerComplexity winner_complexity;
  std::vector<std::pair<std::size_t, int>> passing;  // (candidate index, total)
};

// pools maps level -> dataset for every level in [lo, hi]. Throws
// NO_CANDIDATE_PASSES.
ConstGapReport check_const_gap(const std::vector<Pfst>& candidates, int lo, int hi,
                               const std::map<int, Dataset>& pools, int max_len);

struct StrideViolation {
  int stride = 0;
  std::size_t candidate = 0;
  int total = 0;
};
struct NoSimplerReport {
  std::vector<int> strides;
  std::size_t candidates_checked = 0;
  std::vector<StrideViolation> violations;
  bool holds() const { return violations.empty(); }
};

// Bounded refutation search: any candidate strictly simpler than the winner
// that satisfies the support conditions on every (k, k + stride) pair.
NoSimplerReport check_no_simpler_subseq(const Pfst& winner, const std::vector<Pfst>& candidates,
                                        const std::vector<int>& strides, int lo, int hi,
                                        const std::map<int, Dataset>& pools, int max_len);

// All transducers with complexity <= max_total built from up to max_states
// states and outputs of length <= max_output_len; groups get uniform weights.
std::vector<Pfst> enumerate_pfsts(int max_total, int max_states = 3, int max_output_len = 2);

nlohmann::json pfst_to_json(const Pfst& t);
Pfst pfst_from_json(const nlohmann::json& j);
std::vector<Pfst> read_pfst_file(const std::filesystem::path& path);

}  // namespace dyind

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dyind/rng.hpp"

namespace dyind {

enum class Symbol : char { kOpen = '(', kClose = ')' };

inline constexpr std::array<Symbol, 2> kAlphabet = {Symbol::kOpen, Symbol::kClose};

inline constexpr int symbol_index(Symbol s) { return s == Symbol::kOpen ? 0 : 1; }
inline constexpr Symbol flip(Symbol s) { return s == Symbol::kOpen ? Symbol::kClose : Symbol::kOpen; }

// A string over {'(', ')'}. Stored as text so it can be hashed, ordered and
// written out without conversion.
class BracketString {
 public:
  BracketString() = default;

  // Throws INVALID_ARGUMENT on any character other than '(' or ')'.
  static BracketString parse(std::string_view text);

  std::size_t size() const noexcept { return text_.size(); }
  bool empty() const noexcept { return text_.empty(); }
  Symbol operator[](std::size_t i) const noexcept { return static_cast<Symbol>(text_[i]); }

  void push_back(Symbol s) { text_.push_back(static_cast<char>(s)); }
  void append(const BracketString& other) { text_ += other.text_; }
  void insert(std::size_t pos, Symbol s) { text_.insert(text_.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<char>(s)); }
  void insert(std::size_t pos, const BracketString& other) { text_.insert(pos, other.text_); }
  void erase(std::size_t pos) { text_.erase(pos, 1); }
  void set(std::size_t pos, Symbol s) { text_[pos] = static_cast<char>(s); }

  const std::string& str() const noexcept { return text_; }

  auto operator<=>(const BracketString&) const = default;

 private:
  std::string text_;
};

// Running balance never negative and ends at zero.
bool is_valid(const BracketString& s);

// Maximum prefix balance, floored at zero.
int depth(const BracketString& s);

struct BalanceProfile {
  int final_balance = 0;
  int min_prefix = 0;  // minimum over all prefixes, including the empty one
  int max_prefix = 0;
};
BalanceProfile balance_profile(const BracketString& s);

enum class Label : int { kInvalid = 0, kValid = 1 };

struct LabeledSample {
  BracketString sequence;
  Label label = Label::kInvalid;
  int depth = 0;
  int length = 0;

  // Labels and measures the string with the oracle above.
  static LabeledSample of(BracketString s);

  bool operator==(const LabeledSample&) const = default;
};

// Sampler for  S -> eps | ( S ) | S S  with a nesting budget.
struct GrammarConfig {
  int max_depth = 1;
  int max_length = 20;
  // Valid samples shorter than this are extended with S -> S S.
  int min_length = 2;
  std::array<double, 3> rule_probs = {0.30, 0.45, 0.25};
  int n_samples = 1000;
  // Fraction of valid samples drawn with depth exactly max_depth.
  double top_depth_share = 0.5;
  int rejection_budget = 10000;

  // Throws INVALID_ARGUMENT / INVALID_PROB.
  void validate() const;
};

// One derivation from the budgeted grammar, rejected until the length window
// [min_length, max_length] is met. Throws SAMPLING_EXHAUSTED.
BracketString generate_valid(const GrammarConfig& cfg, Rng& rng);

// A valid string of depth exactly `target_depth` (<= cfg.max_depth): a
// nesting spine decorated with grammar pieces that stay within the depth.
BracketString generate_exact_depth(const GrammarConfig& cfg, int target_depth, Rng& rng);

enum class Corruption : int { kDelete = 1, kInsert = 2, kSubstitute = 3, kConcat = 4 };

// Applies one specific corruption. kConcat needs `second`. Throws EMPTY_INPUT
// for deletion/substitution on an empty string.
BracketString corrupt_with(Corruption kind, const BracketString& s, Rng& rng,
                           const BracketString* second = nullptr);

// Uniform over the corruptions applicable to (s, second).
BracketString corrupt(const BracketString& s, Rng& rng, const BracketString* second = nullptr);

struct Dataset {
  int level = 1;
  std::vector<LabeledSample> train;
  std::vector<LabeledSample> val;
  std::uint64_t seed = 0;
  GrammarConfig config;

  std::vector<LabeledSample> all() const;
  bool operator==(const Dataset& other) const {
    return level == other.level && train == other.train && val == other.val && seed == other.seed;
  }
};

struct DatasetOptions {
  int max_length = 20;
  int min_length = 2;
  double train_fraction = 0.9;
  double top_depth_share = 0.5;
};

// n samples, half valid (depth <= level) and half corruptions of fresh valid
// samples, shuffled and split train/val.
Dataset build_dataset(int level, int n, std::uint64_t seed, const DatasetOptions& opts = {});

struct EntropyEntry {
  int level = 0;
  double non_cumulative_bits = 0.0;
  double cumulative_bits = 0.0;
  std::size_t support_size = 0;  // distinct strings in the cumulative pool
};
using EntropyReport = std::vector<EntropyEntry>;

// Plug-in Shannon entropy (bits) of the empirical distribution of strings.
double plugin_entropy_bits(const std::vector<BracketString>& pool);

// Val-split entropies per level. Non-cumulative: valid samples with depth ==
// level plus the level's invalid samples. Cumulative: all val data <= level.
EntropyReport estimate_entropy(const std::vector<Dataset>& datasets);

// dyck1-<m>.{train,val}.tsv plus dyck1-<m>.meta.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir, int level);

std::string dataset_file_name(int level, std::string_view split);

}  // namespace dyind

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dyind/dyck.hpp"
#include "dyind/fsa.hpp"
#include "dyind/rnn.hpp"
#include "dyind/train.hpp"

namespace dyind {

// One decision interface over classifiers and automata.
class Acceptor {
 public:
  static Acceptor of(const Fsa& fsa);
  static Acceptor of(const RnnParams& classifier);
  static Acceptor constant(Label label);

  Label decide(const BracketString& s) const { return fn_(s); }

 private:
  explicit Acceptor(std::function<Label(const BracketString&)> fn) : fn_(std::move(fn)) {}
  std::function<Label(const BracketString&)> fn_;
};

// 0-1 risk. The Dataset overload scores train and val together. Throws EMPTY_POOL.
double risk(const Acceptor& a, const std::vector<LabeledSample>& test);
double risk(const Acceptor& a, const Dataset& test);

enum class WeightMode { kNormalized, kRaw };
enum class WeightKind { kUniform, kDelta };

struct DgrWeights {
  std::map<int, double> w;
  WeightMode mode = WeightMode::kNormalized;

  // Levels k+1..horizon. Uniform starts from 1/(horizon-k), delta from 1;
  // normalized mode rescales to unit sum, raw mode keeps the values.
  static DgrWeights make(WeightKind kind, int k, int horizon, WeightMode mode);
  // Lines "level,weight"; '#' starts a comment.
  static DgrWeights from_file(const std::filesystem::path& path, WeightMode mode);

  double total() const;
  // Throws INVALID_ARGUMENT on negative weights or a normalized sum off 1.
  void validate() const;
  bool operator==(const DgrWeights&) const = default;
};

using LevelTests = std::map<int, std::vector<LabeledSample>>;

// Test pool for a high level: depth <= level, lengths up to 2 * level + 16 so
// that depth-level strings fit.
Dataset high_depth_test(int level, int n, std::uint64_t seed);

// Sum over weighted levels of weight * risk. Throws MISSING_LEVEL.
double dgr(const Acceptor& a, int k, const DgrWeights& weights, const LevelTests& tests);

struct LevelRisk {
  int level = 0;
  double risk = 0.0;
  double weight = 0.0;
  double contribution = 0.0;
};

struct DgrReport {
  int k = 0;
  int horizon = 0;
  WeightMode mode = WeightMode::kNormalized;
  std::vector<LevelRisk> base;  // frozen h_k
  std::vector<LevelRisk> ind;   // successor chain
  double dgr_base = 0.0;
  double dgr_ind = 0.0;
  double epsilon_gain = 0.0;
  std::vector<std::pair<int, std::string>> failures;
};

// Builds the successor chain from h_k level by level; a failed application
// scores risk 1 at its level and at every later level of the broken chain.
// `base` supplies dgr_base on the same tests and weights.
DgrReport dgr_ind(const RnnParams& lm, const Fsa& h_k, const Acceptor& base, int k, const DgrWeights& weights,
                  const LevelTests& tests, Rng& rng);

struct DgrScore {
  double value = 0.0;
  DgrWeights weights;
};

// dgr_base - dgr_ind >= epsilon. Throws WEIGHT_MISMATCH.
bool inductive_learnability_check(const DgrScore& base, const DgrScore& ind, double epsilon);

std::string dgr_csv(const std::vector<LevelRisk>& rows);

struct AccuracyMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  // values[r][c] holds one accuracy per seed.
  std::vector<std::vector<std::vector<double>>> values;

  double mean(std::size_t r, std::size_t c) const;
  double stddev(std::size_t r, std::size_t c) const;  // sample std, 0 for one seed
};

struct RunKey {
  std::string row;
  std::uint64_t seed = 0;
  auto operator<=>(const RunKey&) const = default;
};

// Every (row, seed) must be present in runs; throws MISSING_RUN.
AccuracyMatrix build_accuracy_matrix(const std::vector<std::string>& rows, const std::vector<std::uint64_t>& seeds,
                                     const std::map<RunKey, Checkpoint>& runs,
                                     const std::vector<std::pair<std::string, std::vector<LabeledSample>>>& tests);

// Cells are percentages "mean ± std".
std::string accuracy_markdown(const AccuracyMatrix& m, const std::string& corner);
std::string accuracy_csv(const AccuracyMatrix& m);
std::string entropy_markdown(const EntropyReport& report);

}  // namespace dyind

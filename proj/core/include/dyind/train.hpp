#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dyind/dyck.hpp"
#include "dyind/rnn.hpp"

namespace dyind {

enum class OptimizerKind : int { kAdam = 0, kSgd = 1 };

struct TrainConfig {
  int batch_size = 32;
  int steps = 15000;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  // Cosine decay of lr from step 0 to `steps`; language model only.
  bool cosine_lr = false;
  int hidden = 16;
  int embed_dim = 16;  // language model only
  int eval_every = 500;

  // Throws INVALID_ARGUMENT.
  void validate() const;
};

// Paper-reproduction defaults for the depth classifier and the successor LM.
TrainConfig classifier_defaults(std::uint64_t seed);
TrainConfig lm_defaults(std::uint64_t seed);

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  RnnParams params;
  TrainConfig config;
  int step = 0;
  std::map<std::string, double> metrics;
  std::uint32_t format_version = kCheckpointFormatVersion;
  int threads = 1;

  bool operator==(const Checkpoint& other) const;
};

// Adam (decoupled weight decay) or SGD (L2 weight decay).
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const RnnParams& shape);
  void step(RnnParams& params, RnnParams& grad);

 private:
  TrainConfig cfg_;
  RnnParams m_;
  RnnParams v_;
  long t_ = 0;
};

// Classifier tokens: '(' -> 0, ')' -> 1.
std::vector<int> bracket_tokens(const BracketString& s);

// VALID iff argmax of the final logits is class 1.
Label classify(const RnnParams& params, const BracketString& s);

double evaluate_accuracy(const Checkpoint& ckpt, const std::vector<LabeledSample>& samples);
double evaluate_accuracy(const Checkpoint& ckpt, const Dataset& ds);  // val split

using ProgressFn = std::function<void(int step, double loss, double val_acc)>;

// Pools train/val splits of all datasets; returns the best-val checkpoint
// (accuracy, ties to lower val loss) sampled every eval_every steps.
// Throws DIVERGENCE on a non-finite loss.
Checkpoint train_classifier(const std::vector<Dataset>& datasets, const TrainConfig& cfg,
                            const ProgressFn& progress = nullptr);

// Episodes in order on one parameter vector; best-val selection runs in the
// last episode only. datasets must hold every scheduled level.
Checkpoint train_continual(const std::vector<std::pair<int, int>>& schedule, const std::map<int, Dataset>& datasets,
                           const TrainConfig& cfg, const ProgressFn& progress = nullptr);

// Decoder-style next-token model over masked positions; 10% of instances are
// held out for best-val selection. Throws EMPTY_TRAINSET.
Checkpoint train_lm(const std::vector<LmExample>& instances, std::size_t vocab, std::size_t n_out,
                    const TrainConfig& cfg, const ProgressFn& progress = nullptr);

// Fraction of masked tokens predicted exactly under teacher forcing.
double lm_token_accuracy(const RnnParams& params, const std::vector<LmExample>& examples);

// Greedy continuation: tokens are fed back until `stop` or `cap` new tokens.
std::vector<int> greedy_decode(const RnnParams& params, std::span<const int> prefix, int stop, std::size_t cap);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace dyind

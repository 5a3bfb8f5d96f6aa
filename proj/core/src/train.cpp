#include "dyind/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dyind/error.hpp"

namespace dyind {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (steps < 0) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 0");
  if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be positive");
  if (weight_decay < 0.0) throw Error(ErrorCode::kInvalidArgument, "weight_decay must be nonnegative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::kInvalidArgument, "dropout must lie in [0, 1)");
  if (hidden < 1 || embed_dim < 1) throw Error(ErrorCode::kInvalidArgument, "layer sizes must be positive");
  if (eval_every < 1) throw Error(ErrorCode::kInvalidArgument, "eval_every must be >= 1");
}

TrainConfig classifier_defaults(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  return cfg;
}

TrainConfig lm_defaults(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.hidden = 64;
  cfg.embed_dim = 16;
  cfg.steps = 300;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.01;
  cfg.dropout = 0.1;
  cfg.eval_every = 50;
  return cfg;
}

Optimizer::Optimizer(const TrainConfig& cfg, const RnnParams& shape)
    : cfg_(cfg), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void Optimizer::step(RnnParams& params, RnnParams& grad) {
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (auto g : grad.tensors()) {
      for (double v : g) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) {
      const double s = cfg_.clip_norm / norm;
      for (auto g : grad.tensors()) {
        for (double& v : g) v *= s;
      }
    }
  }
  ++t_;
  double lr = cfg_.lr;
  if (cfg_.cosine_lr && cfg_.steps > 0) {
    const double frac = std::min(1.0, static_cast<double>(t_ - 1) / cfg_.steps);
    lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  auto p = params.tensors();
  auto g = grad.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (k == 0 && !params.embed_trainable) continue;
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      if (cfg_.optimizer == OptimizerKind::kSgd) {
        p[k][i] -= lr * (g[k][i] + cfg_.weight_decay * p[k][i]);
        continue;
      }
      m[k][i] = cfg_.beta1 * m[k][i] + (1.0 - cfg_.beta1) * g[k][i];
      v[k][i] = cfg_.beta2 * v[k][i] + (1.0 - cfg_.beta2) * g[k][i] * g[k][i];
      const double mhat = m[k][i] / bc1;
      const double vhat = v[k][i] / bc2;
      p[k][i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + cfg_.weight_decay * p[k][i]);
    }
  }
}

std::vector<int> bracket_tokens(const BracketString& s) {
  std::vector<int> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = symbol_index(s[i]);
  return out;
}

Label classify(const RnnParams& params, const BracketString& s) {
  const auto tr = rnn_forward(params, bracket_tokens(s));
  return argmax(tr.logits[0]) == 1 ? Label::kValid : Label::kInvalid;
}

double evaluate_accuracy(const Checkpoint& ckpt, const std::vector<LabeledSample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : samples) correct += classify(ckpt.params, s.sequence) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double evaluate_accuracy(const Checkpoint& ckpt, const Dataset& ds) { return evaluate_accuracy(ckpt, ds.val); }

namespace {

std::vector<ClassifierExample> to_examples(const std::vector<LabeledSample>& samples) {
  std::vector<ClassifierExample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({bracket_tokens(s.sequence), s.label == Label::kValid ? 1 : 0});
  return out;
}

struct ValScore {
  double acc = 0.0;
  double loss = 0.0;
  bool better_than(const ValScore& o) const { return acc > o.acc || (acc == o.acc && loss < o.loss); }
};

ValScore score_classifier(const RnnParams& p, const std::vector<ClassifierExample>& val) {
  ValScore s;
  if (val.empty()) return s;
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& ex : val) {
    const auto tr = rnn_forward(p, ex.tokens);
    correct += static_cast<int>(argmax(tr.logits[0])) == ex.label ? 1 : 0;
    const auto pr = softmax(tr.logits[0]);
    loss -= std::log(std::max(pr[static_cast<std::size_t>(ex.label)], 1e-300));
  }
  s.acc = static_cast<double>(correct) / static_cast<double>(val.size());
  s.loss = loss / static_cast<double>(val.size());
  return s;
}

// Epoch-shuffled minibatches.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  template <typename T>
  std::vector<T> next(const std::vector<T>& items, int batch) {
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(items[order_[pos_++]]);
    }
    return out;
  }

 private:
  void reshuffle() {
    rng_.shuffle(std::span<std::size_t>(order_));
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

void check_finite(double loss, int step) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorCode::kDivergence, "non-finite loss at step " + std::to_string(step));
  }
}

// Runs `steps` classifier updates. When `val` is given, tracks the best-val
// parameters in `best`.
void run_classifier_steps(RnnParams& params, Optimizer& opt, BatchSampler& sampler,
                          const std::vector<ClassifierExample>& train, const std::vector<ClassifierExample>* val,
                          const TrainConfig& cfg, int step_offset, Checkpoint* best, ValScore* best_score,
                          const ProgressFn& progress) {
  auto consider = [&](int local_step, double loss) {
    if (val == nullptr) return;
    const ValScore s = score_classifier(params, *val);
    if (progress) progress(step_offset + local_step, loss, s.acc);
    if (best->step < 0 || s.better_than(*best_score)) {
      *best_score = s;
      best->params = params;
      best->step = step_offset + local_step;
    }
  };
  consider(0, std::nan(""));
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = sampler.next(train, cfg.batch_size);
    auto lg = classifier_backward(params, batch);
    check_finite(lg.loss, step_offset + step);
    opt.step(params, lg.grad);
    if (!params.all_finite()) throw Error(ErrorCode::kDivergence, "non-finite parameters at step " + std::to_string(step_offset + step));
    if (step % cfg.eval_every == 0 || step == cfg.steps) consider(step, lg.loss);
  }
}

}  // namespace

Checkpoint train_classifier(const std::vector<Dataset>& datasets, const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  std::vector<LabeledSample> train_s;
  std::vector<LabeledSample> val_s;
  for (const auto& ds : datasets) {
    train_s.insert(train_s.end(), ds.train.begin(), ds.train.end());
    val_s.insert(val_s.end(), ds.val.begin(), ds.val.end());
  }
  if (train_s.empty()) throw Error(ErrorCode::kEmptyTrainset, "no training samples");
  const auto train = to_examples(train_s);
  const auto val = to_examples(val_s.empty() ? train_s : val_s);

  Rng rng(cfg.seed);
  RnnParams params = RnnParams::init(Task::kClassifier, 2, 2, static_cast<std::size_t>(cfg.hidden), 2, true, rng);
  Optimizer opt(cfg, params);
  BatchSampler sampler(train.size(), rng);

  Checkpoint best;
  best.config = cfg;
  best.step = -1;
  ValScore best_score;
  run_classifier_steps(params, opt, sampler, train, &val, cfg, 0, &best, &best_score, progress);

  best.metrics["val_acc"] = best_score.acc;
  best.metrics["val_loss"] = best_score.loss;
  best.metrics["train_acc"] = score_classifier(best.params, train).acc;
  return best;
}

Checkpoint train_continual(const std::vector<std::pair<int, int>>& schedule, const std::map<int, Dataset>& datasets,
                           const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (schedule.empty()) throw Error(ErrorCode::kEmptyTrainset, "empty schedule");
  Rng rng(cfg.seed);
  RnnParams params = RnnParams::init(Task::kClassifier, 2, 2, static_cast<std::size_t>(cfg.hidden), 2, true, rng);
  Optimizer opt(cfg, params);

  Checkpoint best;
  best.config = cfg;
  best.step = -1;
  ValScore best_score;
  int offset = 0;
  for (std::size_t e = 0; e < schedule.size(); ++e) {
    const auto [level, steps] = schedule[e];
    auto it = datasets.find(level);
    if (it == datasets.end()) throw Error(ErrorCode::kMissingLevel, "no dataset for level " + std::to_string(level));
    const auto train = to_examples(it->second.train);
    if (train.empty()) throw Error(ErrorCode::kEmptyTrainset, "level " + std::to_string(level) + " has no training data");
    const auto val = to_examples(it->second.val.empty() ? it->second.train : it->second.val);
    TrainConfig episode = cfg;
    episode.steps = steps;
    BatchSampler sampler(train.size(), rng);
    const bool last = e + 1 == schedule.size();
    run_classifier_steps(params, opt, sampler, train, last ? &val : nullptr, episode, offset, &best, &best_score,
                         progress);
    offset += steps;
  }
  best.metrics["val_acc"] = best_score.acc;
  best.metrics["val_loss"] = best_score.loss;
  best.metrics["episodes"] = static_cast<double>(schedule.size());
  return best;
}

double lm_token_accuracy(const RnnParams& params, const std::vector<LmExample>& examples) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const auto& ex : examples) {
    const auto tr = rnn_forward(params, ex.tokens);
    for (std::size_t j = 1; j < ex.tokens.size(); ++j) {
      if (!ex.loss_mask[j]) continue;
      ++total;
      correct += static_cast<int>(argmax(tr.logits[j - 1])) == ex.tokens[j] ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

Checkpoint train_lm(const std::vector<LmExample>& instances, std::size_t vocab, std::size_t n_out,
                    const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  if (instances.empty()) throw Error(ErrorCode::kEmptyTrainset, "no successor instances");
  Rng rng(cfg.seed);
  std::vector<LmExample> pool = instances;
  rng.shuffle(std::span<LmExample>(pool));
  const std::size_t n_val = pool.size() >= 10 ? pool.size() / 10 : 0;
  std::vector<LmExample> val(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<LmExample> train(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
  if (val.empty()) val = train;

  RnnParams params = RnnParams::init(Task::kLanguageModel, vocab, static_cast<std::size_t>(cfg.embed_dim),
                                     static_cast<std::size_t>(cfg.hidden), n_out, false, rng);
  Optimizer opt(cfg, params);
  BatchSampler sampler(train.size(), rng);
  Rng dropout_rng = rng.fork();

  Checkpoint best;
  best.config = cfg;
  best.step = -1;
  ValScore best_score;
  auto consider = [&](int step, double loss) {
    ValScore s{lm_token_accuracy(params, val), lm_loss(params, val)};
    if (progress) progress(step, loss, s.acc);
    if (best.step < 0 || s.better_than(best_score)) {
      best_score = s;
      best.params = params;
      best.step = step;
    }
  };
  consider(0, std::nan(""));
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = sampler.next(train, cfg.batch_size);
    auto lg = lm_backward(params, batch, cfg.dropout, cfg.dropout > 0.0 ? &dropout_rng : nullptr);
    check_finite(lg.loss, step);
    opt.step(params, lg.grad);
    if (!params.all_finite()) throw Error(ErrorCode::kDivergence, "non-finite parameters at step " + std::to_string(step));
    if (step % cfg.eval_every == 0 || step == cfg.steps) consider(step, lg.loss);
  }
  best.metrics["val_token_acc"] = best_score.acc;
  best.metrics["val_loss"] = best_score.loss;
  best.metrics["train_token_acc"] = lm_token_accuracy(best.params, train);
  return best;
}

std::vector<int> greedy_decode(const RnnParams& params, std::span<const int> prefix, int stop, std::size_t cap) {
  auto hidden = rnn_hidden_states(params, prefix);
  std::vector<double> h = hidden.back();
  std::vector<int> out;
  while (out.size() < cap) {
    const auto logits = rnn_project(params, h);
    const int tok = static_cast<int>(argmax(logits));
    out.push_back(tok);
    if (tok == stop) break;
    h = rnn_step(params, tok, h);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint files: "DYIND", u32 format_version, u32 hidden, u32 vocab,
// u32 d_in, u32 n_out, u32 task, u32 embed_trainable, then the f64 arrays in
// field order, then u64 trailer length and the JSON trailer.

namespace {

constexpr char kMagic[5] = {'D', 'Y', 'I', 'N', 'D'};

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["optimizer"] = c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["clip_norm"] = c.clip_norm;
  j["cosine_lr"] = c.cosine_lr;
  j["hidden"] = c.hidden;
  j["embed_dim"] = c.embed_dim;
  j["eval_every"] = c.eval_every;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<int>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.optimizer = j.at("optimizer").get<std::string>() == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.cosine_lr = j.value("cosine_lr", false);
  c.hidden = j.at("hidden").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  return c;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::kFormatMismatch, "checkpoint truncated");
  }
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool Checkpoint::operator==(const Checkpoint& other) const {
  return params == other.params && config_to_json(config) == config_to_json(other.config) && step == other.step &&
         metrics == other.metrics && format_version == other.format_version && threads == other.threads;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, ckpt.format_version);
  put_u32(out, static_cast<std::uint32_t>(p.hidden_size));
  put_u32(out, static_cast<std::uint32_t>(p.vocab()));
  put_u32(out, static_cast<std::uint32_t>(p.d_in()));
  put_u32(out, static_cast<std::uint32_t>(p.n_out()));
  put_u32(out, static_cast<std::uint32_t>(p.task));
  put_u32(out, p.embed_trainable ? 1u : 0u);
  for (auto t : p.tensors()) {
    for (double v : t) put_f64(out, v);
  }
  nlohmann::ordered_json trailer;
  trailer["config"] = config_to_json(ckpt.config);
  trailer["step"] = ckpt.step;
  trailer["threads"] = ckpt.threads;
  trailer["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.metrics) trailer["metrics"][k] = v;
  const std::string js = trailer.dump();
  put_u64(out, js.size());
  out += js;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(ErrorCode::kFormatMismatch, "bad checkpoint magic");
  }
  Checkpoint ckpt;
  ckpt.format_version = r.u32();
  if (ckpt.format_version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kFormatMismatch, "checkpoint format_version " + std::to_string(ckpt.format_version) +
                                                " is not the supported version " +
                                                std::to_string(kCheckpointFormatVersion));
  }
  const std::size_t hidden = r.u32();
  const std::size_t vocab = r.u32();
  const std::size_t d_in = r.u32();
  const std::size_t n_out = r.u32();
  const std::uint32_t task = r.u32();
  const std::uint32_t trainable = r.u32();
  if (task > 1 || trainable > 1 || hidden == 0 || hidden > 4096 || vocab > 4096 || d_in > 4096 || n_out > 4096) {
    throw Error(ErrorCode::kFormatMismatch, "implausible checkpoint header");
  }
  auto& p = ckpt.params;
  p.hidden_size = hidden;
  p.task = static_cast<Task>(task);
  p.embed_trainable = trainable == 1;
  p.input_embed = Matrix(vocab, d_in);
  p.w_ih = Matrix(hidden, d_in);
  p.w_hh = Matrix(hidden, hidden);
  p.b_h.assign(hidden, 0.0);
  p.w_out = Matrix(n_out, hidden);
  p.b_out.assign(n_out, 0.0);
  for (auto t : p.tensors()) {
    for (double& v : t) v = r.f64();
  }
  const std::uint64_t len = r.u64();
  const std::string js = r.take(static_cast<std::size_t>(len));
  if (!r.done()) throw Error(ErrorCode::kFormatMismatch, "trailing bytes after checkpoint trailer");
  try {
    const auto trailer = nlohmann::json::parse(js);
    ckpt.config = config_from_json(trailer.at("config"));
    ckpt.step = trailer.at("step").get<int>();
    ckpt.threads = trailer.at("threads").get<int>();
    for (const auto& [k, v] : trailer.at("metrics").items()) ckpt.metrics[k] = v.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatMismatch, std::string("checkpoint trailer: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp);
    const auto bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace dyind

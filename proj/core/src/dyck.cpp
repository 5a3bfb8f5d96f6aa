#include "dyind/dyck.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dyind/error.hpp"

namespace dyind {

BracketString BracketString::parse(std::string_view text) {
  BracketString out;
  for (char c : text) {
    if (c != '(' && c != ')') {
      throw Error(ErrorCode::kInvalidArgument, "not a bracket symbol: '" + std::string(1, c) + "'");
    }
  }
  out.text_ = std::string(text);
  return out;
}

BalanceProfile balance_profile(const BracketString& s) {
  BalanceProfile p;
  int bal = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bal += s[i] == Symbol::kOpen ? 1 : -1;
    p.min_prefix = std::min(p.min_prefix, bal);
    p.max_prefix = std::max(p.max_prefix, bal);
  }
  p.final_balance = bal;
  return p;
}

bool is_valid(const BracketString& s) {
  int bal = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bal += s[i] == Symbol::kOpen ? 1 : -1;
    if (bal < 0) return false;
  }
  return bal == 0;
}

int depth(const BracketString& s) { return balance_profile(s).max_prefix; }

LabeledSample LabeledSample::of(BracketString s) {
  LabeledSample out;
  out.label = is_valid(s) ? Label::kValid : Label::kInvalid;
  out.depth = dyind::depth(s);
  out.length = static_cast<int>(s.size());
  out.sequence = std::move(s);
  return out;
}

void GrammarConfig::validate() const {
  if (max_depth < 0) throw Error(ErrorCode::kInvalidArgument, "max_depth must be nonnegative");
  if (max_length < 0 || min_length < 0 || min_length > max_length) {
    throw Error(ErrorCode::kInvalidArgument, "invalid length window");
  }
  double sum = 0.0;
  for (double p : rule_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidProb, "rule probability outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw Error(ErrorCode::kInvalidProb, "rule probabilities must sum to 1");
  if (!(top_depth_share >= 0.0 && top_depth_share <= 1.0)) {
    throw Error(ErrorCode::kInvalidProb, "top_depth_share outside [0,1]");
  }
  if (rejection_budget < 1) throw Error(ErrorCode::kInvalidArgument, "rejection_budget must be positive");
}

namespace {

// One derivation of the budgeted grammar. Returns false when the derivation
// would exceed max_length.
bool derive_once(const GrammarConfig& cfg, int budget, int max_length, Rng& rng, BracketString& out) {
  // Positive entries expand S with that budget + 1; zero emits ')'.
  std::vector<int> stack;
  stack.push_back(budget + 1);
  int opens = 0;
  std::size_t expansions = 0;
  const double p_eps = cfg.rule_probs[0];
  const double p_wrap = cfg.rule_probs[1];
  while (!stack.empty()) {
    const int top = stack.back();
    stack.pop_back();
    if (top == 0) {
      out.push_back(Symbol::kClose);
      continue;
    }
    if (++expansions > 1'000'000) return false;
    const int b = top - 1;
    if (b == 0) continue;
    const double r = rng.uniform();
    if (r < p_eps) continue;
    if (r < p_eps + p_wrap) {
      if (2 * (opens + 1) > max_length) return false;
      ++opens;
      out.push_back(Symbol::kOpen);
      stack.push_back(0);
      stack.push_back(b);  // budget b - 1, encoded as b
    } else {
      stack.push_back(top);
      stack.push_back(top);
    }
  }
  return true;
}

// Nonempty sample with depth <= budget and length <= max_length, or false.
bool draw_piece(const GrammarConfig& cfg, int budget, int max_length, int attempts, Rng& rng,
                BracketString& out) {
  for (int a = 0; a < attempts; ++a) {
    BracketString s;
    if (derive_once(cfg, budget, max_length, rng, s) && !s.empty()) {
      out = std::move(s);
      return true;
    }
  }
  return false;
}

}  // namespace

BracketString generate_valid(const GrammarConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.min_length == 0) {
    // The unconstrained grammar, empty string included.
    for (int attempt = 0; attempt < cfg.rejection_budget; ++attempt) {
      BracketString s;
      if (derive_once(cfg, cfg.max_depth, cfg.max_length, rng, s)) return s;
    }
    throw Error(ErrorCode::kSamplingExhausted, "no derivation within max_length");
  }
  int attempts = 0;
  while (attempts < cfg.rejection_budget) {
    BracketString s;
    bool overflow = false;
    // S -> S S until the minimum length is reached.
    while (static_cast<int>(s.size()) < cfg.min_length) {
      if (++attempts > cfg.rejection_budget) break;
      BracketString piece;
      const int room = cfg.max_length - static_cast<int>(s.size());
      if (!derive_once(cfg, cfg.max_depth, room, rng, piece)) {
        overflow = true;
        break;
      }
      s.append(piece);
    }
    if (!overflow && static_cast<int>(s.size()) >= cfg.min_length &&
        static_cast<int>(s.size()) <= cfg.max_length) {
      return s;
    }
  }
  throw Error(ErrorCode::kSamplingExhausted,
              "rejection budget of " + std::to_string(cfg.rejection_budget) + " attempts exceeded");
}

BracketString generate_exact_depth(const GrammarConfig& cfg, int target_depth, Rng& rng) {
  cfg.validate();
  if (target_depth < 0 || target_depth > cfg.max_depth) {
    throw Error(ErrorCode::kInvalidArgument, "target depth outside [0, max_depth]");
  }
  if (2 * target_depth > cfg.max_length) {
    throw Error(ErrorCode::kSamplingExhausted, "depth " + std::to_string(target_depth) +
                                                   " needs more than max_length symbols");
  }
  BracketString s;
  for (int i = 0; i < target_depth; ++i) s.push_back(Symbol::kOpen);
  for (int i = 0; i < target_depth; ++i) s.push_back(Symbol::kClose);

  constexpr double kContinue = 0.75;
  constexpr int kMaxRounds = 256;
  constexpr int kPieceAttempts = 64;
  for (int round = 0; round < kMaxRounds; ++round) {
    const bool forced = static_cast<int>(s.size()) < cfg.min_length;
    if (!forced && !rng.bernoulli(kContinue)) break;
    const int room = cfg.max_length - static_cast<int>(s.size());
    if (room < 2) break;
    const auto pos = static_cast<std::size_t>(rng.below(s.size() + 1));
    int bal = 0;
    for (std::size_t i = 0; i < pos; ++i) bal += s[i] == Symbol::kOpen ? 1 : -1;
    const int allowed = target_depth - bal;
    if (allowed <= 0) continue;
    BracketString piece;
    if (draw_piece(cfg, allowed, room, kPieceAttempts, rng, piece)) s.insert(pos, piece);
  }
  if (static_cast<int>(s.size()) < cfg.min_length) {
    throw Error(ErrorCode::kSamplingExhausted, "could not reach min_length at exact depth");
  }
  return s;
}

BracketString corrupt_with(Corruption kind, const BracketString& s, Rng& rng, const BracketString* second) {
  BracketString out = s;
  switch (kind) {
    case Corruption::kDelete:
      if (s.empty()) throw Error(ErrorCode::kEmptyInput, "cannot delete from the empty string");
      out.erase(static_cast<std::size_t>(rng.below(s.size())));
      return out;
    case Corruption::kInsert: {
      const auto pos = static_cast<std::size_t>(rng.below(s.size() + 1));
      out.insert(pos, rng.bernoulli(0.5) ? Symbol::kOpen : Symbol::kClose);
      return out;
    }
    case Corruption::kSubstitute: {
      if (s.empty()) throw Error(ErrorCode::kEmptyInput, "cannot substitute in the empty string");
      const auto pos = static_cast<std::size_t>(rng.below(s.size()));
      out.set(pos, flip(s[pos]));
      return out;
    }
    case Corruption::kConcat: {
      if (second == nullptr) throw Error(ErrorCode::kInvalidArgument, "X ) Y corruption needs a second string");
      BracketString y = *second;
      y.insert(static_cast<std::size_t>(rng.below(y.size() + 1)), Symbol::kOpen);
      out.push_back(Symbol::kClose);
      out.append(y);
      return out;
    }
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown corruption");
}

BracketString corrupt(const BracketString& s, Rng& rng, const BracketString* second) {
  std::vector<Corruption> kinds;
  if (!s.empty()) kinds.push_back(Corruption::kDelete);
  kinds.push_back(Corruption::kInsert);
  if (!s.empty()) kinds.push_back(Corruption::kSubstitute);
  if (second != nullptr) kinds.push_back(Corruption::kConcat);
  return corrupt_with(kinds[rng.below(kinds.size())], s, rng, second);
}

std::vector<LabeledSample> Dataset::all() const {
  std::vector<LabeledSample> out = train;
  out.insert(out.end(), val.begin(), val.end());
  return out;
}

namespace {

GrammarConfig level_config(int level, int n, const DatasetOptions& opts) {
  GrammarConfig cfg;
  cfg.max_depth = level;
  cfg.max_length = opts.max_length;
  cfg.min_length = opts.min_length;
  cfg.n_samples = n;
  cfg.top_depth_share = opts.top_depth_share;
  return cfg;
}

BracketString draw_mixture(const GrammarConfig& cfg, bool top, Rng& rng) {
  return top ? generate_exact_depth(cfg, cfg.max_depth, rng) : generate_valid(cfg, rng);
}

}  // namespace

Dataset build_dataset(int level, int n, std::uint64_t seed, const DatasetOptions& opts) {
  if (level < 1) throw Error(ErrorCode::kInvalidArgument, "level must be >= 1");
  if (n < 10) throw Error(ErrorCode::kInvalidArgument, "dataset needs at least 10 samples");
  const GrammarConfig cfg = level_config(level, n, opts);
  cfg.validate();
  Rng rng(seed);

  const int n_valid = n / 2;
  const int n_invalid = n - n_valid;
  const int n_top = static_cast<int>(std::lround(cfg.top_depth_share * n_valid));

  std::vector<LabeledSample> pool;
  pool.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n_valid; ++i) {
    pool.push_back(LabeledSample::of(draw_mixture(cfg, i < n_top, rng)));
  }

  const int invalid_min = cfg.min_length > 2 ? cfg.min_length : 0;
  for (int i = 0; i < n_invalid; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < cfg.rejection_budget && !done; ++attempt) {
      const BracketString x = draw_mixture(cfg, rng.bernoulli(cfg.top_depth_share), rng);
      BracketString y;
      bool have_y = false;
      const int y_room = cfg.max_length - static_cast<int>(x.size()) - 2;
      if (y_room >= 0) {
        GrammarConfig ycfg = cfg;
        ycfg.min_length = 0;
        ycfg.max_length = y_room;
        y = generate_valid(ycfg, rng);
        have_y = true;
      }
      BracketString bad = corrupt(x, rng, have_y ? &y : nullptr);
      const int len = static_cast<int>(bad.size());
      if (len <= cfg.max_length && len >= invalid_min) {
        pool.push_back(LabeledSample::of(std::move(bad)));
        done = true;
      }
    }
    if (!done) throw Error(ErrorCode::kSamplingExhausted, "no corruption fits the length window");
  }

  rng.shuffle(std::span<LabeledSample>(pool));
  const auto n_train = static_cast<std::size_t>(std::lround(opts.train_fraction * n));

  Dataset ds;
  ds.level = level;
  ds.seed = seed;
  ds.config = cfg;
  ds.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  return ds;
}

double plugin_entropy_bits(const std::vector<BracketString>& pool) {
  if (pool.empty()) throw Error(ErrorCode::kEmptyPool, "entropy of an empty pool");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : pool) ++counts[s.str()];
  const double n = static_cast<double>(pool.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

EntropyReport estimate_entropy(const std::vector<Dataset>& datasets) {
  if (datasets.empty()) throw Error(ErrorCode::kEmptyPool, "no datasets");
  EntropyReport report;
  std::vector<BracketString> cumulative;
  for (const auto& ds : datasets) {
    if (ds.val.empty()) throw Error(ErrorCode::kEmptyPool, "level " + std::to_string(ds.level) + " has no val samples");
    std::vector<BracketString> level_pool;
    for (const auto& s : ds.val) {
      if (s.label == Label::kInvalid || s.depth == ds.level) level_pool.push_back(s.sequence);
      cumulative.push_back(s.sequence);
    }
    if (level_pool.empty()) throw Error(ErrorCode::kEmptyPool, "level " + std::to_string(ds.level) + " pool is empty");
    EntropyEntry e;
    e.level = ds.level;
    e.non_cumulative_bits = plugin_entropy_bits(level_pool);
    e.cumulative_bits = plugin_entropy_bits(cumulative);
    std::map<std::string, int> distinct;
    for (const auto& s : cumulative) distinct[s.str()] = 1;
    e.support_size = distinct.size();
    report.push_back(e);
  }
  return report;
}

std::string dataset_file_name(int level, std::string_view split) {
  return "dyck1-" + std::to_string(level) + "." + std::string(split) + (split == "meta" ? ".json" : ".tsv");
}

namespace {

void write_split(const std::vector<LabeledSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& s : samples) {
    out << (s.label == Label::kValid ? '1' : '0') << '\t' << s.sequence.str() << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<LabeledSample> read_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<LabeledSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.size() < 2 || line[1] != '\t' || (line[0] != '0' && line[0] != '1')) {
      throw Error(ErrorCode::kFormatMismatch, path.string() + ":" + std::to_string(lineno) + ": bad sample line");
    }
    auto sample = LabeledSample::of(BracketString::parse(std::string_view(line).substr(2)));
    const Label stated = line[0] == '1' ? Label::kValid : Label::kInvalid;
    if (sample.label != stated) {
      throw Error(ErrorCode::kFormatMismatch, path.string() + ":" + std::to_string(lineno) + ": label disagrees with sequence");
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_split(ds.train, dir / dataset_file_name(ds.level, "train"));
  write_split(ds.val, dir / dataset_file_name(ds.level, "val"));

  std::size_t valid = 0;
  for (const auto& s : ds.train) valid += s.label == Label::kValid;
  for (const auto& s : ds.val) valid += s.label == Label::kValid;
  nlohmann::ordered_json meta;
  meta["level"] = ds.level;
  meta["seed"] = ds.seed;
  meta["counts"] = {{"train", ds.train.size()},
                    {"val", ds.val.size()},
                    {"valid", valid},
                    {"invalid", ds.train.size() + ds.val.size() - valid}};
  meta["generator"] = {{"max_depth", ds.config.max_depth},
                       {"max_length", ds.config.max_length},
                       {"min_length", ds.config.min_length},
                       {"rule_probs", ds.config.rule_probs},
                       {"top_depth_share", ds.config.top_depth_share},
                       {"n_samples", ds.config.n_samples},
                       {"rejection_budget", ds.config.rejection_budget}};
  std::ofstream out(dir / dataset_file_name(ds.level, "meta"), std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write meta for level " + std::to_string(ds.level));
  out << meta.dump(2) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir, int level) {
  const auto meta_path = dir / dataset_file_name(level, "meta");
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, meta_path.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatMismatch, meta_path.string() + ": " + e.what());
  }
  Dataset ds;
  ds.level = meta.at("level").get<int>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const auto& g = meta.at("generator");
  ds.config.max_depth = g.at("max_depth").get<int>();
  ds.config.max_length = g.at("max_length").get<int>();
  ds.config.min_length = g.at("min_length").get<int>();
  ds.config.rule_probs = g.at("rule_probs").get<std::array<double, 3>>();
  ds.config.top_depth_share = g.at("top_depth_share").get<double>();
  ds.config.n_samples = g.at("n_samples").get<int>();
  ds.config.rejection_budget = g.at("rejection_budget").get<int>();
  ds.train = read_split(dir / dataset_file_name(level, "train"));
  ds.val = read_split(dir / dataset_file_name(level, "val"));
  return ds;
}

}  // namespace dyind

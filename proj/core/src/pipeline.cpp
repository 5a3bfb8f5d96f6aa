#include "dyind/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dyind/error.hpp"
#include "dyind/eval.hpp"
#include "dyind/fsa.hpp"
#include "dyind/successor.hpp"

namespace dyind {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string trim_ws(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

long long parse_integer(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw Error(ErrorCode::kParseError, fmt::format("{}: expected an integer, got '{}'", key, v));
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const long long x = parse_integer(key, v);
  if (x < INT32_MIN || x > INT32_MAX) throw Error(ErrorCode::kParseError, fmt::format("{}: {} is out of range", key, v));
  return static_cast<int>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out)) {
    throw Error(ErrorCode::kParseError, fmt::format("{}: expected a number, got '{}'", key, v));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::kParseError, fmt::format("{}: expected true or false, got '{}'", key, v));
}

struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool affects_results = true;
};

#define DYIND_INT(name, expr) \
  Field{name, [](const RunConfig& c) { return std::to_string(c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_int(name, v); }}
#define DYIND_REAL(name, expr) \
  Field{name, [](const RunConfig& c) { return fmt::format("{}", c.expr); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_real(name, v); }}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"experiment", [](const RunConfig& c) { return c.experiment; },
                 [](RunConfig& c, const std::string& v) { c.experiment = v; }});
    f.push_back({"seeds", [](const RunConfig& c) { return seeds_text(c.seeds); },
                 [](RunConfig& c, const std::string& v) { c.seeds = parse_seed_list(v); }, false});
    f.push_back(DYIND_INT("level_min", level_min));
    f.push_back(DYIND_INT("level_max", level_max));
    f.push_back(DYIND_INT("test_extra", test_extra));
    f.push_back(DYIND_INT("n_train", n_train));
    f.push_back(DYIND_INT("n_test", n_test));
    f.push_back(DYIND_INT("classifier.batch_size", classifier.batch_size));
    f.push_back(DYIND_INT("classifier.steps", classifier.steps));
    f.push_back(DYIND_REAL("classifier.lr", classifier.lr));
    f.push_back(DYIND_REAL("classifier.weight_decay", classifier.weight_decay));
    f.push_back(DYIND_REAL("classifier.clip_norm", classifier.clip_norm));
    f.push_back(DYIND_INT("classifier.hidden", classifier.hidden));
    f.push_back(DYIND_INT("classifier.eval_every", classifier.eval_every));
    f.push_back({"classifier.optimizer",
                 [](const RunConfig& c) { return std::string(c.classifier.optimizer == OptimizerKind::kSgd ? "sgd" : "adam"); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "adam") c.classifier.optimizer = OptimizerKind::kAdam;
                   else if (v == "sgd") c.classifier.optimizer = OptimizerKind::kSgd;
                   else throw Error(ErrorCode::kParseError, "classifier.optimizer: expected adam or sgd, got '" + v + "'");
                 }});
    f.push_back(DYIND_INT("continual_steps", continual_steps));
    f.push_back(DYIND_INT("lm.batch_size", lm.batch_size));
    f.push_back(DYIND_INT("lm.steps", lm.steps));
    f.push_back(DYIND_REAL("lm.lr", lm.lr));
    f.push_back(DYIND_REAL("lm.weight_decay", lm.weight_decay));
    f.push_back(DYIND_REAL("lm.dropout", lm.dropout));
    f.push_back(DYIND_REAL("lm.clip_norm", lm.clip_norm));
    f.push_back({"lm.cosine_lr", [](const RunConfig& c) { return std::string(c.lm.cosine_lr ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) { c.lm.cosine_lr = parse_bool("lm.cosine_lr", v); }});
    f.push_back(DYIND_INT("lm.hidden", lm.hidden));
    f.push_back(DYIND_INT("lm.embed_dim", lm.embed_dim));
    f.push_back(DYIND_INT("lm.eval_every", lm.eval_every));
    f.push_back(DYIND_INT("n_per_step", n_per_step));
    f.push_back({"shuffle", [](const RunConfig& c) { return std::string(c.shuffle ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) { c.shuffle = parse_bool("shuffle", v); }});
    f.push_back(DYIND_INT("apply_namings", apply_namings));
    f.push_back(DYIND_INT("base_attempts", base_attempts));
    f.push_back(DYIND_INT("dgr_k", dgr_k));
    f.push_back(DYIND_INT("dgr_horizon", dgr_horizon));
    f.push_back({"dgr_mode", [](const RunConfig& c) { return c.dgr_mode; },
                 [](RunConfig& c, const std::string& v) { c.dgr_mode = v; }});
    f.push_back({"dgr_weights", [](const RunConfig& c) { return c.dgr_weights; },
                 [](RunConfig& c, const std::string& v) { c.dgr_weights = v; }});
    f.push_back(DYIND_INT("extraction.probe_samples", extraction.probe_samples));
    f.push_back(DYIND_INT("extraction.cluster_min", extraction.cluster_min));
    f.push_back(DYIND_INT("extraction.cluster_max", extraction.cluster_max));
    f.push_back(DYIND_REAL("extraction.threshold", extraction.agreement_threshold));
    f.push_back(DYIND_INT("extraction.max_probe_len", extraction.max_probe_len));
    f.push_back(DYIND_INT("extraction.data_max_len", extraction.data_max_len));
    f.push_back(DYIND_INT("extraction.restarts", extraction.restarts));
    f.push_back(DYIND_INT("extraction.iterations", extraction.iterations));
    f.push_back(DYIND_INT("extraction.fit_points", extraction.fit_points));
    f.push_back({"out", [](const RunConfig& c) { return c.out.string(); },
                 [](RunConfig& c, const std::string& v) { c.out = v; }, false});
    Field jobs = DYIND_INT("jobs", jobs);
    jobs.affects_results = false;
    f.push_back(jobs);
    return f;
  }();
  return table;
}

#undef DYIND_INT
#undef DYIND_REAL

// Config lines that influence a run's results; out, jobs and the seed list
// are left out so a resumed run matches regardless of how it was launched.
std::string snapshot(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    if (f.affects_results) out += f.name + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string status_name(StageStatus s) {
  switch (s) {
    case StageStatus::kPending: return "pending";
    case StageStatus::kDone: return "done";
    case StageStatus::kFailed: return "failed";
  }
  return "pending";
}

StageStatus status_from(const std::string& s) {
  if (s == "done") return StageStatus::kDone;
  if (s == "failed") return StageStatus::kFailed;
  if (s == "pending") return StageStatus::kPending;
  throw Error(ErrorCode::kParseError, "unknown stage status '" + s + "'");
}

std::string level_row(int m) { return "dyck1-" + std::to_string(m); }

std::string schedule_row(int last) {
  std::string out;
  for (int l = 1; l <= last; ++l) out += (l > 1 ? "-" : "") + std::to_string(l);
  return out;
}

// One run: a manifest plus the stages executed against it.
class Run {
 public:
  Run(const RunConfig& cfg, std::uint64_t seed, LogFn log) : cfg_(cfg), seed_(seed), dir_(run_dir(cfg, seed)), log_(std::move(log)) {
    fs::create_directories(dir_);
    const std::string snap = snapshot(cfg);
    if (fs::exists(dir_ / "manifest.json")) {
      manifest_ = load_manifest(dir_);
      if (manifest_.config != snap || manifest_.experiment != cfg.experiment || manifest_.seed != seed) {
        say("config changed since the last run; starting over");
        manifest_.stages.clear();
      }
    }
    manifest_.experiment = cfg.experiment;
    manifest_.seed = seed;
    manifest_.tool_version = kToolVersion;
    manifest_.config = snap;
  }

  const fs::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }
  bool failed() const { return failed_; }

  // Runs `fn` unless the manifest already holds it as done with every
  // artifact present. Returns false once any stage has failed.
  bool stage(const std::string& name, const std::function<std::vector<std::string>()>& fn) {
    if (failed_) return false;
    StageRecord* rec = manifest_.find(name);
    if (rec != nullptr && rec->status == StageStatus::kDone &&
        std::all_of(rec->artifacts.begin(), rec->artifacts.end(), [&](const std::string& a) { return fs::exists(dir_ / a); })) {
      say(name + ": done, skipping");
      return true;
    }
    if (rec == nullptr) {
      manifest_.stages.push_back({});
      rec = &manifest_.stages.back();
      rec->name = name;
    }
    rec->status = StageStatus::kPending;
    rec->started = utc_now();
    rec->finished.clear();
    rec->error.clear();
    rec->artifacts.clear();
    say(name + ": running");
    try {
      auto artifacts = fn();
      rec = manifest_.find(name);
      rec->artifacts = std::move(artifacts);
      rec->status = StageStatus::kDone;
    } catch (const std::exception& e) {
      rec = manifest_.find(name);
      rec->status = StageStatus::kFailed;
      rec->error = e.what();
      failed_ = true;
      say(name + ": failed: " + e.what());
    }
    rec->finished = utc_now();
    save_manifest(manifest_, dir_);
    return !failed_;
  }

  std::uint64_t seed_for(std::string_view purpose, int level) const { return derive_seed(seed_, purpose, level); }

  void say(const std::string& msg) const {
    if (log_) log_(fmt::format("[{} seed {}] {}", cfg_.experiment, seed_, msg));
  }

 private:
  const RunConfig& cfg_;
  std::uint64_t seed_;
  fs::path dir_;
  LogFn log_;
  RunManifest manifest_;
  bool failed_ = false;
};

std::string rel(const fs::path& p) { return p.generic_string(); }

std::vector<std::string> dataset_artifacts(const std::string& sub, int level) {
  std::vector<std::string> out;
  for (const char* split : {"train", "val", "meta"}) out.push_back(rel(fs::path(sub) / dataset_file_name(level, split)));
  return out;
}

void append(std::vector<std::string>& a, const std::vector<std::string>& b) { a.insert(a.end(), b.begin(), b.end()); }

std::vector<std::string> write_level_data(const RunConfig& cfg, const Run& run, int level) {
  const Dataset ds = build_dataset(level, cfg.n_train, run.seed_for("data", level));
  write_dataset(ds, run.dir() / "data");
  return dataset_artifacts("data", level);
}

std::vector<std::string> write_test(const Run& run, const std::string& sub, int level, int n, const DatasetOptions& opts,
                                    std::string_view purpose) {
  fs::create_directories(run.dir() / sub);
  const Dataset ds = build_dataset(level, n, run.seed_for(purpose, level), opts);
  write_dataset(ds, run.dir() / sub);
  return dataset_artifacts(sub, level);
}

DatasetOptions length_window(int lo, int hi) {
  DatasetOptions o;
  o.min_length = lo;
  o.max_length = hi;
  return o;
}

struct Table {
  std::string name;
  std::string corner;
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<std::vector<double>> values;

  json to_json() const { return {{"name", name}, {"corner", corner}, {"rows", rows}, {"cols", cols}, {"values", values}}; }
};

std::string ckpt_path(const std::string& row) { return rel(fs::path("ckpt") / (row + ".ckpt")); }

TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

json entropy_json(const EntropyReport& rep) {
  json a = json::array();
  for (const auto& e : rep) {
    a.push_back({{"level", e.level}, {"non_cumulative_bits", e.non_cumulative_bits}, {"cumulative_bits", e.cumulative_bits},
                 {"support_size", e.support_size}});
  }
  return a;
}

void write_metrics(const Run& run, const json& j) {
  write_file_atomic(run.dir() / "report" / "metrics.json", j.dump(2) + "\n");
}

void run_exp1(const RunConfig& cfg, Run& run) {
  const int top_test = cfg.level_max + cfg.test_extra;
  const bool depth_table = cfg.experiment != "exp1-length";
  run.stage("data", [&] {
    std::vector<std::string> out;
    for (int m = cfg.level_min; m <= cfg.level_max; ++m) append(out, write_level_data(cfg, run, m));
    if (depth_table) {
      for (int j = 1; j <= top_test; ++j) append(out, write_test(run, "data/test", j, cfg.n_test, {}, "test"));
    }
    for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
      append(out, write_test(run, "data/len40", m, cfg.n_test, length_window(21, 40), "len40"));
      append(out, write_test(run, "data/len60", m, cfg.n_test, length_window(41, 60), "len60"));
    }
    return out;
  });
  for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
    run.stage("train-" + std::to_string(m), [&] {
      const Dataset ds = read_dataset(run.dir() / "data", m);
      const auto ck = train_classifier({ds}, seeded(cfg.classifier, run.seed_for("classifier", m)));
      fs::create_directories(run.dir() / "ckpt");
      save_checkpoint(ck, run.dir() / ckpt_path(level_row(m)));
      run.say(fmt::format("train-{}: best step {} val acc {:.4f}", m, ck.step, ck.metrics.at("val_acc")));
      return std::vector<std::string>{ckpt_path(level_row(m))};
    });
  }
  run.stage("eval", [&] {
    json tables = json::array();
    Table depth{"depth", "train \\ test", {}, {}, {}};
    Table length{"length", "train \\ test", {}, {"<=20", "21-40", "41-60"}, {}};
    for (int j = 1; j <= top_test; ++j) depth.cols.push_back(level_row(j));
    std::map<int, std::vector<LabeledSample>> tests;
    if (depth_table) {
      for (int j = 1; j <= top_test; ++j) tests[j] = read_dataset(run.dir() / "data/test", j).all();
    }
    std::vector<Dataset> train_sets;
    for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
      const auto ck = load_checkpoint(run.dir() / ckpt_path(level_row(m)));
      train_sets.push_back(read_dataset(run.dir() / "data", m));
      if (depth_table) {
        depth.rows.push_back(level_row(m));
        std::vector<double> row;
        for (int j = 1; j <= top_test; ++j) row.push_back(evaluate_accuracy(ck, tests[j]));
        depth.values.push_back(row);
      }
      length.rows.push_back(level_row(m));
      // Same-length column: the level's own held-out split.
      length.values.push_back({evaluate_accuracy(ck, train_sets.back().val),
                               evaluate_accuracy(ck, read_dataset(run.dir() / "data/len40", m).all()),
                               evaluate_accuracy(ck, read_dataset(run.dir() / "data/len60", m).all())});
    }
    if (depth_table) tables.push_back(depth.to_json());
    tables.push_back(length.to_json());
    json j{{"experiment", cfg.experiment}, {"seed", run.manifest().seed}, {"tables", tables}};
    j["entropy"] = entropy_json(estimate_entropy(train_sets));
    write_metrics(run, j);
    return std::vector<std::string>{"report/metrics.json"};
  });
}

void run_exp2(const RunConfig& cfg, Run& run) {
  const int top_test = cfg.level_max + cfg.test_extra;
  run.stage("data", [&] {
    std::vector<std::string> out;
    for (int m = 1; m <= cfg.level_max; ++m) append(out, write_level_data(cfg, run, m));
    for (int j = 1; j <= top_test; ++j) append(out, write_test(run, "data/test", j, cfg.n_test, {}, "test"));
    return out;
  });
  for (int last = cfg.level_min; last <= cfg.level_max; ++last) {
    const std::string row = schedule_row(last);
    run.stage("train-" + row, [&] {
      std::map<int, Dataset> data;
      std::vector<std::pair<int, int>> schedule;
      for (int l = 1; l <= last; ++l) {
        data.emplace(l, read_dataset(run.dir() / "data", l));
        schedule.emplace_back(l, cfg.continual_steps);
      }
      const auto ck = train_continual(schedule, data, seeded(cfg.classifier, run.seed_for("continual", last)));
      fs::create_directories(run.dir() / "ckpt");
      save_checkpoint(ck, run.dir() / ckpt_path(row));
      return std::vector<std::string>{ckpt_path(row)};
    });
  }
  run.stage("eval", [&] {
    Table t{"continual", "train \\ test", {}, {}, {}};
    std::vector<std::vector<LabeledSample>> tests;
    for (int j = 1; j <= top_test; ++j) {
      t.cols.push_back(level_row(j));
      tests.push_back(read_dataset(run.dir() / "data/test", j).all());
    }
    for (int last = cfg.level_min; last <= cfg.level_max; ++last) {
      const std::string row = schedule_row(last);
      const auto ck = load_checkpoint(run.dir() / ckpt_path(row));
      t.rows.push_back("dyck1-" + row);
      std::vector<double> vals;
      for (const auto& test : tests) vals.push_back(evaluate_accuracy(ck, test));
      t.values.push_back(vals);
    }
    write_metrics(run, {{"experiment", cfg.experiment}, {"seed", run.manifest().seed}, {"tables", json::array({t.to_json()})}});
    return std::vector<std::string>{"report/metrics.json"};
  });
}

// Counter successor of a chain: one new state past the deepest one.
Fsa chain_successor(const Fsa& fsa) {
  Fsa out = fsa;
  const int t = deepest_state(fsa);
  const int n = out.add_state("n" + std::to_string(out.num_states()), false);
  out.set_edge(t, Symbol::kOpen, n);
  out.set_edge(n, Symbol::kClose, t);
  return out;
}

DgrWeights weights_for(const RunConfig& cfg) {
  const WeightMode mode = cfg.dgr_mode == "normalized" ? WeightMode::kNormalized : WeightMode::kRaw;
  if (cfg.dgr_weights == "delta") return DgrWeights::make(WeightKind::kDelta, cfg.dgr_k, cfg.dgr_horizon, mode);
  if (cfg.dgr_weights == "uniform") return DgrWeights::make(WeightKind::kUniform, cfg.dgr_k, cfg.dgr_horizon, mode);
  return DgrWeights::from_file(cfg.dgr_weights, mode);
}

json level_risks_json(const std::vector<LevelRisk>& rows) {
  json a = json::array();
  for (const auto& r : rows) a.push_back({{"level", r.level}, {"risk", r.risk}, {"weight", r.weight}, {"contribution", r.contribution}});
  return a;
}

void run_exp3(const RunConfig& cfg, Run& run) {
  const int k = cfg.dgr_k;
  const auto weights = weights_for(cfg);
  run.stage("data", [&] {
    std::vector<std::string> out;
    for (int m = 1; m <= cfg.level_max; ++m) append(out, write_level_data(cfg, run, m));
    for (const auto& [level, w] : weights.w) {
      (void)w;
      fs::create_directories(run.dir() / "data/dgr");
      write_dataset(high_depth_test(level, cfg.n_test, run.seed_for("dgr-test", level)), run.dir() / "data/dgr");
      append(out, dataset_artifacts("data/dgr", level));
    }
    return out;
  });
  // h_m must be a faithful machine and the chain successor of h_{m-1}, since
  // the successor data are built from these. A classifier that fails either
  // check is retrained from the next attempt seed, up to base_attempts.
  for (int m = 1; m <= cfg.level_max; ++m) {
    run.stage("base-" + std::to_string(m), [&] {
      const Dataset ds = read_dataset(run.dir() / "data", m);
      std::optional<Fsa> prev;
      if (m > 1) prev = read_fsa(run.dir() / "fsa" / fmt::format("h{}.json", m - 1));
      std::string why;
      for (int attempt = 0; attempt < cfg.base_attempts; ++attempt) {
        const auto seed = attempt == 0 ? run.seed_for("classifier", m)
                                       : run.seed_for(fmt::format("classifier-attempt-{}", attempt), m);
        auto ck = train_classifier({ds}, seeded(cfg.classifier, seed));
        ExtractionConfig ec = cfg.extraction;
        ec.level = m;
        ec.seed = run.seed_for("extract", m);
        const auto res = extract_fsa(ck.params, ec);
        if (res.warning) {
          why = fmt::format("best fidelity {:.4f} below {}", res.fidelity, ec.agreement_threshold);
        } else if (prev && !fsa_isomorphic(minimize(chain_successor(*prev)), res.fsa)) {
          why = fmt::format("{}-state machine is not the successor of h{}", res.fsa.num_states(), m - 1);
        } else {
          why.clear();
        }
        run.say(fmt::format("base-{} attempt {}: best step {} val acc {:.4f}, {} states, fidelity {:.4f}{}", m, attempt,
                            ck.step, ck.metrics.at("val_acc"), res.fsa.num_states(), res.fidelity,
                            why.empty() ? "" : " (" + why + ")"));
        if (!why.empty()) continue;
        ck.metrics["attempt"] = attempt;
        ck.metrics["fidelity"] = res.fidelity;
        fs::create_directories(run.dir() / "ckpt");
        fs::create_directories(run.dir() / "fsa");
        fs::create_directories(run.dir() / "enc");
        save_checkpoint(ck, run.dir() / ckpt_path(level_row(m)));
        const std::string fsa_file = rel(fs::path("fsa") / fmt::format("h{}.json", m));
        const std::string enc_file = rel(fs::path("enc") / fmt::format("h{}.txt", m));
        write_fsa(res.fsa, run.dir() / fsa_file);
        // Display encoding with letters in state order, for readability.
        std::string letters;
        for (std::size_t i = 0; i < res.fsa.num_states() && i < 52; ++i) letters += letter_char(static_cast<int>(i));
        std::string enc = fmt::format("# states {} clusters {} fidelity {:.4f} attempt {}\n", res.fsa.num_states(),
                                      res.clusters, res.fidelity, attempt);
        try {
          enc += encode_fsa(res.fsa, NamingMap::from_string(letters)).text() + "\n";
        } catch (const Error& e) {
          enc += std::string("# not encodable: ") + e.what() + "\n";
        }
        write_file_atomic(run.dir() / enc_file, enc);
        return std::vector<std::string>{ckpt_path(level_row(m)), fsa_file, enc_file};
      }
      throw Error(ErrorCode::kNoFaithfulMachine,
                  fmt::format("level {}: no usable machine in {} attempts; last: {}", m, cfg.base_attempts, why));
    });
  }
  run.stage("successor-data", [&] {
    std::vector<Fsa> h;
    for (int m = 1; m <= cfg.level_max; ++m) h.push_back(read_fsa(run.dir() / "fsa" / fmt::format("h{}.json", m)));
    Rng rng(run.seed_for("successor-data", 0));
    std::vector<TrainingInstance> set;
    for (int m = 1; m < cfg.level_max; ++m) {
      if (!fsa_isomorphic(minimize(chain_successor(h[m - 1])), h[m])) {
        throw Error(ErrorCode::kNotAChain, fmt::format("extracted h{} is not the successor of extracted h{}", m + 1, m));
      }
      for (int i = 0; i < cfg.n_per_step; ++i) set.push_back(build_instance(h[m - 1], rng, cfg.shuffle));
    }
    write_instances(set, run.dir() / "enc" / "successor.enc.txt");
    return std::vector<std::string>{"enc/successor.enc.txt"};
  });
  run.stage("lm", [&] {
    const auto set = read_instances(run.dir() / "enc" / "successor.enc.txt");
    std::vector<LmExample> ex;
    ex.reserve(set.size());
    for (const auto& inst : set) ex.push_back(inst.example());
    const auto ck = train_lm(ex, kInputVocab, kModelVocab, seeded(cfg.lm, run.seed_for("lm", 0)));
    fs::create_directories(run.dir() / "ckpt");
    save_checkpoint(ck, run.dir() / "ckpt" / "successor.ckpt");
    run.say(fmt::format("lm: best step {} val token acc {:.4f}", ck.step, ck.metrics.at("val_token_acc")));
    return std::vector<std::string>{"ckpt/successor.ckpt"};
  });
  run.stage("apply", [&] {
    const auto lm = load_checkpoint(run.dir() / "ckpt" / "successor.ckpt");
    Rng rng(run.seed_for("apply", 0));
    int ok = 0;
    int total = 0;
    int first_fail = 0;
    for (int m = k + 1; m < cfg.dgr_horizon; ++m) {
      const Fsa target = counter_fsa(m + 1);
      for (int r = 0; r < cfg.apply_namings; ++r) {
        ++total;
        bool good = false;
        try {
          good = fsa_isomorphic(apply_ind(lm.params, counter_fsa(m), rng, cfg.shuffle), target);
        } catch (const Error&) {
          good = false;
        }
        if (good) ++ok;
        else if (first_fail == 0) first_fail = m;
      }
    }
    json j{{"namings_ok", ok}, {"namings_total", total}, {"first_failure", first_fail}};
    fs::create_directories(run.dir() / "report");
    write_file_atomic(run.dir() / "report" / "apply.json", j.dump(2) + "\n");
    run.say(fmt::format("apply: {}/{} namings exact", ok, total));
    return std::vector<std::string>{"report/apply.json"};
  });
  run.stage("dgr", [&] {
    const auto lm = load_checkpoint(run.dir() / "ckpt" / "successor.ckpt");
    const auto base = load_checkpoint(run.dir() / ckpt_path(level_row(k)));
    const Fsa h_k = read_fsa(run.dir() / "fsa" / fmt::format("h{}.json", k));
    LevelTests tests;
    for (const auto& [level, w] : weights.w) {
      (void)w;
      tests[level] = read_dataset(run.dir() / "data/dgr", level).all();
    }
    Rng rng(run.seed_for("dgr", 0));
    const auto rep = dgr_ind(lm.params, h_k, Acceptor::of(base.params), k, weights, tests, rng);
    write_file_atomic(run.dir() / "report" / "dgr_ind.csv", dgr_csv(rep.ind));
    write_file_atomic(run.dir() / "report" / "dgr_base.csv", dgr_csv(rep.base));
    json failures = json::array();
    for (const auto& [m, e] : rep.failures) failures.push_back({{"level", m}, {"error", e}});
    const json apply = json::parse(read_file(run.dir() / "report" / "apply.json"));
    json j{{"experiment", cfg.experiment},
           {"seed", run.manifest().seed},
           {"k", rep.k},
           {"horizon", rep.horizon},
           {"mode", rep.mode == WeightMode::kRaw ? "raw" : "normalized"},
           {"dgr_base", rep.dgr_base},
           {"dgr_ind", rep.dgr_ind},
           {"epsilon_gain", rep.epsilon_gain},
           {"lm_val_token_acc", lm.metrics.count("val_token_acc") ? lm.metrics.at("val_token_acc") : 0.0},
           {"apply", apply},
           {"failures", failures},
           {"base", level_risks_json(rep.base)},
           {"ind", level_risks_json(rep.ind)}};
    write_metrics(run, j);
    run.say(fmt::format("dgr: base {:.4f} ind {:.4f}", rep.dgr_base, rep.dgr_ind));
    return std::vector<std::string>{"report/dgr_ind.csv", "report/dgr_base.csv", "report/metrics.json"};
  });
}

RunManifest run_one(const RunConfig& cfg, std::uint64_t seed, const LogFn& log) {
  Run run(cfg, seed, log);
  if (cfg.experiment == "exp1" || cfg.experiment == "exp1-length") run_exp1(cfg, run);
  else if (cfg.experiment == "exp2") run_exp2(cfg, run);
  else if (cfg.experiment == "exp3") run_exp3(cfg, run);
  else throw Error(ErrorCode::kInvalidArgument, "repro needs exp1, exp1-length, exp2 or exp3, got '" + cfg.experiment + "'");
  save_manifest(run.manifest(), run.dir());
  return run.manifest();
}

std::string fmt_real(double v) { return fmt::format("{:.4f}", v); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string exp3_report(const std::vector<std::pair<std::uint64_t, json>>& runs, const fs::path& exp_dir) {
  std::string md = "# exp3\n\n";
  const json& first = runs.front().second;
  md += fmt::format("k = {}, horizon = {}, weights mode = {}\n\n", first["k"].get<int>(), first["horizon"].get<int>(),
                    first["mode"].get<std::string>());
  md += "| seed | dgr_base | dgr_ind | epsilon_gain | exact successors | lm val token acc |\n|---|---|---|---|---|---|\n";
  std::vector<double> base, ind;
  for (const auto& [seed, j] : runs) {
    base.push_back(j["dgr_base"].get<double>());
    ind.push_back(j["dgr_ind"].get<double>());
    md += fmt::format("| {} | {} | {} | {} | {}/{} | {} |\n", seed, fmt_real(j["dgr_base"].get<double>()),
                      fmt_real(j["dgr_ind"].get<double>()), fmt_real(j["epsilon_gain"].get<double>()),
                      j["apply"]["namings_ok"].get<int>(), j["apply"]["namings_total"].get<int>(),
                      fmt_real(j["lm_val_token_acc"].get<double>()));
  }
  md += fmt::format("| mean | {} | {} | {} | | |\n\n", fmt_real(mean_of(base)), fmt_real(mean_of(ind)),
                    fmt_real(mean_of(base) - mean_of(ind)));
  md += "## Per-level risk (seed " + std::to_string(runs.front().first) + ")\n\n| level | base | ind |\n|---|---|---|\n";
  for (std::size_t i = 0; i < first["ind"].size(); ++i) {
    md += fmt::format("| {} | {} | {} |\n", first["ind"][i]["level"].get<int>(), fmt_real(first["base"][i]["risk"].get<double>()),
                      fmt_real(first["ind"][i]["risk"].get<double>()));
  }
  if (!first["failures"].empty()) {
    md += "\nFailures:\n\n";
    for (const auto& f : first["failures"]) md += fmt::format("- level {}: {}\n", f["level"].get<int>(), f["error"].get<std::string>());
  }
  const fs::path seed_dir = exp_dir / std::to_string(runs.front().first);
  md += "\n## Extracted machines (seed " + std::to_string(runs.front().first) + ")\n\n";
  for (int m = 1;; ++m) {
    const fs::path enc = seed_dir / "enc" / fmt::format("h{}.txt", m);
    if (!fs::exists(enc)) break;
    std::istringstream lines(read_file(enc));
    std::string line, body;
    while (std::getline(lines, line)) {
      if (!line.empty() && line[0] != '#') body = line;
    }
    md += fmt::format("- h{}: `{}`\n", m, body);
  }
  return md;
}

}  // namespace

RunConfig RunConfig::defaults_for(const std::string& experiment) {
  RunConfig c;
  c.experiment = experiment;
  if (experiment == "exp1" || experiment == "exp1-length") {
    c.seeds = {1, 2, 3, 4, 5};
    c.test_extra = 2;
  } else if (experiment == "exp2") {
    c.seeds = {1, 2, 3, 4, 5};
    c.test_extra = 1;
  } else if (experiment == "exp3") {
    c.seeds = {1};
    c.test_extra = 0;
    // The short high-lr recipe stalls around 0.9 token accuracy here; this one
    // reaches every naming on m up to 51.
    c.lm.steps = 20000;
    c.lm.lr = 0.001;
    c.lm.dropout = 0.0;
    c.lm.weight_decay = 0.0;
    c.lm.clip_norm = 1.0;
    c.lm.eval_every = 500;
    c.n_per_step = 2048;
  } else if (experiment != "custom") {
    throw Error(ErrorCode::kInvalidArgument, "unknown experiment '" + experiment + "'");
  }
  return c;
}

RunConfig RunConfig::parse(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim_ws(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kParseError, fmt::format("line {}: expected key = value", lineno));
    try {
      base.set(trim_ws(body.substr(0, eq)), trim_ws(body.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("line {}: {}", lineno, e.detail()));
    }
  }
  return base;
}

RunConfig RunConfig::from_file(const fs::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str(), std::move(base));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.name == key) {
      f.set(*this, value);
      return;
    }
  }
  throw Error(ErrorCode::kParseError, "unknown key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

void RunConfig::validate() const {
  static const std::set<std::string> experiments = {"exp1", "exp1-length", "exp2", "exp3", "custom"};
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
  if (!experiments.count(experiment)) bad("unknown experiment '" + experiment + "'");
  if (seeds.empty()) bad("seeds must not be empty");
  if (level_min < 1 || level_max < level_min) bad(fmt::format("levels {}..{} are not a valid range", level_min, level_max));
  if (level_max > 51) bad("level_max must be at most 51");
  if (test_extra < 0) bad("test_extra must be >= 0");
  if (n_train < 10 || n_test < 2) bad("n_train must be >= 10 and n_test >= 2");
  if (continual_steps < 1) bad("continual_steps must be >= 1");
  if (n_per_step < 1) bad("n_per_step must be >= 1");
  if (base_attempts < 1) bad("base_attempts must be >= 1");
  if (apply_namings < 0) bad("apply_namings must be >= 0");
  if (dgr_mode != "raw" && dgr_mode != "normalized") bad("dgr_mode must be raw or normalized");
  if (dgr_k < 1 || dgr_horizon <= dgr_k || dgr_horizon > 52) bad(fmt::format("need 1 <= dgr_k < dgr_horizon <= 52, got {} and {}", dgr_k, dgr_horizon));
  if (experiment == "exp3" && level_max <= dgr_k) bad("exp3 needs level_max > dgr_k");
  if (jobs < 1) bad("jobs must be >= 1");
  classifier.validate();
  lm.validate();
  extraction.validate();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  const std::string t = trim_ws(text);
  auto num = [&](const std::string& s) -> std::uint64_t {
    const std::string v = trim_ws(s);
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw Error(ErrorCode::kParseError, "bad seed '" + v + "' in '" + text + "'");
    }
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, "seed out of range: '" + v + "'");
    }
  };
  const auto dots = t.find("..");
  if (dots != std::string::npos) {
    const auto a = num(t.substr(0, dots));
    const auto b = num(t.substr(dots + 2));
    if (b < a || b - a > 10000) throw Error(ErrorCode::kParseError, "bad seed range '" + text + "'");
    for (auto s = a; s <= b; ++s) out.push_back(s);
    return out;
  }
  std::istringstream in(t);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(num(part));
  if (out.empty()) throw Error(ErrorCode::kParseError, "empty seed list");
  return out;
}

std::pair<int, int> parse_range(const std::string& text) {
  const std::string t = trim_ws(text);
  const auto dots = t.find("..");
  if (dots == std::string::npos) {
    const int v = parse_int("range", t);
    return {v, v};
  }
  const int a = parse_int("range", trim_ws(t.substr(0, dots)));
  const int b = parse_int("range", trim_ws(t.substr(dots + 2)));
  if (b < a) throw Error(ErrorCode::kParseError, "empty range '" + text + "'");
  return {a, b};
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, int level) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : purpose) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  return splitmix(splitmix(seed) ^ h ^ splitmix(static_cast<std::uint64_t>(static_cast<std::int64_t>(level)) + 0x51ED));
}

StageRecord* RunManifest::find(const std::string& stage) {
  for (auto& s : stages) {
    if (s.name == stage) return &s;
  }
  return nullptr;
}

std::string RunManifest::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  j["config"] = config;
  j["stages"] = json::array();
  for (const auto& s : stages) {
    j["stages"].push_back({{"name", s.name},
                           {"status", status_name(s.status)},
                           {"started", s.started},
                           {"finished", s.finished},
                           {"artifacts", s.artifacts},
                           {"error", s.error}});
  }
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  RunManifest m;
  try {
    const json j = json::parse(text);
    m.experiment = j.at("experiment").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = j.at("config").get<std::string>();
    for (const auto& s : j.at("stages")) {
      StageRecord r;
      r.name = s.at("name").get<std::string>();
      r.status = status_from(s.at("status").get<std::string>());
      r.started = s.at("started").get<std::string>();
      r.finished = s.at("finished").get<std::string>();
      r.artifacts = s.at("artifacts").get<std::vector<std::string>>();
      r.error = s.at("error").get<std::string>();
      m.stages.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("manifest: ") + e.what());
  }
  return m;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingArtifact, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunManifest load_manifest(const fs::path& dir) { return RunManifest::from_json(read_file(dir / "manifest.json")); }

void save_manifest(const RunManifest& m, const fs::path& dir) { write_file_atomic(dir / "manifest.json", m.to_json()); }

fs::path experiment_dir(const RunConfig& cfg) { return cfg.out / cfg.experiment; }

fs::path run_dir(const RunConfig& cfg, std::uint64_t seed) { return experiment_dir(cfg) / std::to_string(seed); }

std::vector<fs::path> cmd_gen_data(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
    const Dataset ds = build_dataset(m, cfg.n_train, derive_seed(seed, "data", m));
    write_dataset(ds, dir);
    for (const char* split : {"train", "val", "meta"}) out.push_back(dir / dataset_file_name(m, split));
  }
  return out;
}

ReproResult cmd_repro(const RunConfig& cfg, const LogFn& log) {
  cfg.validate();
  if (cfg.experiment == "custom") throw Error(ErrorCode::kInvalidArgument, "repro needs exp1, exp1-length, exp2 or exp3");
  const fs::path exp_dir = experiment_dir(cfg);
  fs::create_directories(exp_dir);
  {
    json j{{"experiment", cfg.experiment}, {"seeds", cfg.seeds}, {"tool_version", kToolVersion}};
    write_file_atomic(exp_dir / "experiment.json", j.dump(2) + "\n");
  }
  std::mutex log_mu;
  LogFn safe_log = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    log(msg);
  };

  ReproResult result;
  result.manifests.resize(cfg.seeds.size());
  std::vector<std::string> errors(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      try {
        result.manifests[i] = run_one(cfg, cfg.seeds[i], safe_log);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::min<int>(cfg.jobs, static_cast<int>(cfg.seeds.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    if (!errors[i].empty()) {
      result.ok = false;
      safe_log(fmt::format("[{} seed {}] {}", cfg.experiment, cfg.seeds[i], errors[i]));
      continue;
    }
    for (const auto& s : result.manifests[i].stages) {
      if (s.status != StageStatus::kDone) result.ok = false;
    }
  }
  if (result.ok) result.report = cmd_report(exp_dir);
  return result;
}

fs::path cmd_report(const fs::path& exp_dir) {
  const json meta = json::parse(read_file(exp_dir / "experiment.json"));
  const std::string experiment = meta.at("experiment").get<std::string>();
  const auto seeds = meta.at("seeds").get<std::vector<std::uint64_t>>();
  std::vector<std::pair<std::uint64_t, json>> runs;
  for (auto seed : seeds) {
    const fs::path p = exp_dir / std::to_string(seed) / "report" / "metrics.json";
    if (!fs::exists(p)) throw Error(ErrorCode::kMissingArtifact, p.string());
    runs.emplace_back(seed, json::parse(read_file(p)));
  }
  std::string md;
  if (experiment == "exp3") {
    md = exp3_report(runs, exp_dir);
  } else {
    md = "# " + experiment + "\n\n";
    std::string seed_list;
    for (std::size_t i = 0; i < seeds.size(); ++i) seed_list += (i ? ", " : "") + std::to_string(seeds[i]);
    md += "Accuracy (%) as mean ± std over seeds " + seed_list + ".\n";
    for (const auto& table : runs.front().second.at("tables")) {
      AccuracyMatrix m;
      m.rows = table.at("rows").get<std::vector<std::string>>();
      m.cols = table.at("cols").get<std::vector<std::string>>();
      m.values.assign(m.rows.size(), std::vector<std::vector<double>>(m.cols.size()));
      const std::string name = table.at("name").get<std::string>();
      for (const auto& [seed, j] : runs) {
        const json* t = nullptr;
        for (const auto& cand : j.at("tables")) {
          if (cand.at("name") == name) t = &cand;
        }
        if (t == nullptr) throw Error(ErrorCode::kMissingArtifact, fmt::format("table {} for seed {}", name, seed));
        const auto vals = t->at("values").get<std::vector<std::vector<double>>>();
        for (std::size_t r = 0; r < m.rows.size(); ++r) {
          for (std::size_t c = 0; c < m.cols.size(); ++c) m.values[r][c].push_back(vals.at(r).at(c));
        }
      }
      md += "\n## " + name + "\n\n" + accuracy_markdown(m, table.at("corner").get<std::string>());
      write_file_atomic(exp_dir / (name + ".csv"), accuracy_csv(m));
    }
    if (runs.front().second.contains("entropy")) {
      EntropyReport mean;
      for (const auto& e : runs.front().second["entropy"]) mean.push_back({e["level"].get<int>(), 0.0, 0.0, 0});
      for (const auto& [seed, j] : runs) {
        (void)seed;
        const auto& ent = j["entropy"];
        for (std::size_t i = 0; i < mean.size(); ++i) {
          mean[i].non_cumulative_bits += ent[i]["non_cumulative_bits"].get<double>() / static_cast<double>(runs.size());
          mean[i].cumulative_bits += ent[i]["cumulative_bits"].get<double>() / static_cast<double>(runs.size());
          mean[i].support_size += ent[i]["support_size"].get<std::size_t>();
        }
      }
      for (auto& e : mean) e.support_size /= runs.size();
      md += "\n## entropy (bits, mean over seeds)\n\n" + entropy_markdown(mean);
    }
  }
  const fs::path out = exp_dir / "report.md";
  write_file_atomic(out, md);
  return out;
}

}  // namespace dyind

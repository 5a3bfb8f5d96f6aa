#pragma once

#include <cstdint>
#include <utility>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dyind/extract.hpp"
#include "dyind/train.hpp"

namespace dyind {

inline constexpr const char* kToolVersion = "0.1.0";

// Declarative run description. Text form is one `key = value` per line with
// '#' comments; see RunConfig::keys() for the schema.
struct RunConfig {
  std::string experiment = "custom";  // exp1, exp1-length, exp2, exp3, custom
  std::vector<std::uint64_t> seeds{1};
  int level_min = 1;
  int level_max = 4;
  int test_extra = 2;      // exp1 tests levels up to level_max + test_extra
  int n_train = 10000;     // samples per level dataset (train + val)
  int n_test = 2000;       // samples per test level
  TrainConfig classifier = classifier_defaults(1);
  int continual_steps = 10000;  // per episode
  TrainConfig lm = lm_defaults(1);
  int n_per_step = 512;
  bool shuffle = false;
  int apply_namings = 20;  // fresh namings per level in the exp3 apply stage
  int base_attempts = 5;   // exp3 classifier retries per level, see run_exp3
  int dgr_k = 3;
  int dgr_horizon = 52;
  std::string dgr_mode = "raw";  // raw or normalized
  std::string dgr_weights = "delta";
  ExtractionConfig extraction;
  std::filesystem::path out = "runs";
  int jobs = 1;

  static RunConfig defaults_for(const std::string& experiment);
  // Unknown keys and malformed values throw PARSE_ERROR naming the line.
  static RunConfig parse(const std::string& text, RunConfig base);
  static RunConfig parse(const std::string& text) { return parse(text, RunConfig{}); }
  static RunConfig from_file(const std::filesystem::path& path, RunConfig base);
  // Applies one `key = value` assignment.
  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
  static std::vector<std::string> keys();
  // Throws INVALID_ARGUMENT.
  void validate() const;
};

// "1..5" or "1,2,7"; throws PARSE_ERROR.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
// "a..b" -> {a, b}; a single integer "a" -> {a, a}.
std::pair<int, int> parse_range(const std::string& text);

// Independent 64-bit stream id for (seed, purpose, level).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, int level);

enum class StageStatus { kPending, kDone, kFailed };

struct StageRecord {
  std::string name;
  StageStatus status = StageStatus::kPending;
  std::string started;
  std::string finished;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::string error;
};

struct RunManifest {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string config;  // RunConfig::to_text snapshot
  std::vector<StageRecord> stages;

  StageRecord* find(const std::string& stage);
  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

// write-temp-then-rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);  // throws MISSING_ARTIFACT

RunManifest load_manifest(const std::filesystem::path& run_dir);
void save_manifest(const RunManifest& m, const std::filesystem::path& run_dir);

std::filesystem::path run_dir(const RunConfig& cfg, std::uint64_t seed);
std::filesystem::path experiment_dir(const RunConfig& cfg);

using LogFn = std::function<void(const std::string&)>;

// Writes dyck1-<m>.{train,val}.tsv and meta for every level into dir.
std::vector<std::filesystem::path> cmd_gen_data(const RunConfig& cfg, std::uint64_t seed,
                                                const std::filesystem::path& dir);

struct ReproResult {
  std::vector<RunManifest> manifests;
  std::filesystem::path report;  // aggregate markdown
  bool ok = true;
};

// Runs every seed of cfg.experiment (cfg.jobs at a time), resuming completed
// stages, then writes the aggregate report.
ReproResult cmd_repro(const RunConfig& cfg, const LogFn& log = nullptr);

// Rebuilds <exp dir>/report.md and CSVs from persisted per-seed metrics.
// Throws MISSING_ARTIFACT.
std::filesystem::path cmd_report(const std::filesystem::path& experiment_dir);

}  // namespace dyind

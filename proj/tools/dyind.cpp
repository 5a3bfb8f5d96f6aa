// dyind: command-line front end over the dyind core library.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dyind/dyck.hpp"
#include "dyind/error.hpp"
#include "dyind/eval.hpp"
#include "dyind/extract.hpp"
#include "dyind/fsa.hpp"
#include "dyind/pipeline.hpp"
#include "dyind/progression.hpp"
#include "dyind/successor.hpp"
#include "dyind/train.hpp"

namespace fs = std::filesystem;
using namespace dyind;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::string config;
  std::string out;
  int jobs = 0;
};

// Precedence: defaults < --config file < DYIND_OUT < --out / --jobs.
RunConfig resolve(const Globals& g, const std::string& experiment = "custom") {
  RunConfig cfg = RunConfig::defaults_for(experiment);
  if (!g.config.empty()) cfg = RunConfig::from_file(g.config, cfg);
  if (const char* env = std::getenv("DYIND_OUT"); env != nullptr && *env != '\0') cfg.out = env;
  if (!g.out.empty()) cfg.out = g.out;
  if (g.jobs > 0) cfg.jobs = g.jobs;
  if (experiment != "custom") cfg.experiment = experiment;
  return cfg;
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

void progress_printer(int step, double loss, double val) {
  std::fprintf(stderr, "step %6d  val loss %.4f  val acc %.4f\n", step, loss, val);
}

void print_fsa_summary(const Fsa& f) {
  std::string letters;
  for (std::size_t i = 0; i < f.num_states() && i < 52; ++i) letters += letter_char(static_cast<int>(i));
  std::printf("states %zu  transitions %zu\n", f.num_states(), f.num_transitions());
  try {
    std::printf("%s\n", encode_fsa(f, NamingMap::from_string(letters)).text().c_str());
  } catch (const Error&) {
    // Only chains with accepting = {initial} have a symbolic encoding.
  }
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  if (text.find("..") != std::string::npos) {
    const auto [a, b] = parse_range(text);
    for (int v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  for (auto s : parse_seed_list(text)) out.push_back(static_cast<int>(s));
  return out;
}

Dataset load_or_build(const fs::path& dir, int level, const RunConfig& cfg, std::uint64_t seed) {
  if (fs::exists(dir / dataset_file_name(level, "train"))) return read_dataset(dir, level);
  log_line(fmt::format("{} has no level {} data; generating it", dir.string(), level));
  return build_dataset(level, cfg.n_train, derive_seed(seed, "data", level));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inductive-learning workbench for depth-bounded Dyck languages"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);
  Globals g;
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Random seed");
  app.add_option("--config", g.config, "Run config file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output root (overrides DYIND_OUT)");
  app.add_option("--jobs", g.jobs, "Concurrent runs for repro")->check(CLI::PositiveNumber);

  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write dyck1-<m>.{train,val}.tsv per level");
  std::string gen_levels;
  int gen_n = 0;
  std::string gen_dir;
  gen->add_option("--levels", gen_levels, "Levels a..b");
  gen->add_option("--n", gen_n, "Samples per level")->check(CLI::PositiveNumber);
  gen->add_option("--dir", gen_dir, "Output directory (default <out>/data)");
  gen->callback([&] {
    action = [&] {
      RunConfig cfg = resolve(g);
      if (!gen_levels.empty()) std::tie(cfg.level_min, cfg.level_max) = parse_range(gen_levels);
      if (gen_n > 0) cfg.n_train = gen_n;
      const fs::path dir = gen_dir.empty() ? cfg.out / "data" : fs::path(gen_dir);
      for (const auto& p : cmd_gen_data(cfg, g.seed, dir)) std::printf("%s\n", p.string().c_str());
    };
  });

  // train-base
  auto* tb = app.add_subcommand("train-base", "Train a depth classifier on dyck1-m");
  std::string tb_levels;
  std::string tb_data;
  std::string tb_ckpt;
  int tb_steps = 0;
  tb->add_option("--levels,--level", tb_levels, "Training level m, or a..b to pool levels")->required();
  tb->add_option("--data", tb_data, "Dataset directory (default <out>/data)");
  tb->add_option("--ckpt", tb_ckpt, "Checkpoint path (default <out>/ckpt/dyck1-<m>.ckpt)");
  tb->add_option("--steps", tb_steps, "Training steps")->check(CLI::PositiveNumber);
  tb->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const auto [a, b] = parse_range(tb_levels);
      const fs::path data = tb_data.empty() ? cfg.out / "data" : fs::path(tb_data);
      std::vector<Dataset> sets;
      for (int m = a; m <= b; ++m) sets.push_back(load_or_build(data, m, cfg, g.seed));
      TrainConfig tc = cfg.classifier;
      tc.seed = derive_seed(g.seed, "classifier", b);
      if (tb_steps > 0) tc.steps = tb_steps;
      const auto ck = train_classifier(sets, tc, progress_printer);
      const std::string name = a == b ? fmt::format("dyck1-{}", b) : fmt::format("dyck1-{}..{}", a, b);
      const fs::path path = tb_ckpt.empty() ? cfg.out / "ckpt" / (name + ".ckpt") : fs::path(tb_ckpt);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      save_checkpoint(ck, path);
      std::printf("%s  best step %d  val_acc %.4f  train_acc %.4f\n", path.string().c_str(), ck.step, ck.metrics.at("val_acc"),
                  ck.metrics.at("train_acc"));
    };
  });

  // train-continual
  auto* tc_cmd = app.add_subcommand("train-continual", "Train one classifier over an easy-to-hard schedule");
  std::string tc_schedule = "1,2,3,4";
  int tc_steps = 0;
  std::string tc_data;
  std::string tc_ckpt;
  tc_cmd->add_option("--schedule", tc_schedule, "Levels in order, e.g. 1,2,3,4");
  tc_cmd->add_option("--steps-per-episode", tc_steps, "Steps per episode")->check(CLI::PositiveNumber);
  tc_cmd->add_option("--data", tc_data, "Dataset directory (default <out>/data)");
  tc_cmd->add_option("--ckpt", tc_ckpt, "Checkpoint path");
  tc_cmd->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const fs::path data = tc_data.empty() ? cfg.out / "data" : fs::path(tc_data);
      std::vector<std::pair<int, int>> schedule;
      std::map<int, Dataset> sets;
      std::string name = "continual";
      for (int l : parse_int_list(tc_schedule)) {
        schedule.emplace_back(l, tc_steps > 0 ? tc_steps : cfg.continual_steps);
        if (!sets.count(l)) sets.emplace(l, load_or_build(data, l, cfg, g.seed));
        name += "-" + std::to_string(l);
      }
      TrainConfig tcfg = cfg.classifier;
      tcfg.seed = derive_seed(g.seed, "continual", schedule.back().first);
      const auto ck = train_continual(schedule, sets, tcfg, progress_printer);
      const fs::path path = tc_ckpt.empty() ? cfg.out / "ckpt" / (name + ".ckpt") : fs::path(tc_ckpt);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      save_checkpoint(ck, path);
      std::printf("%s  best step %d  val_acc %.4f\n", path.string().c_str(), ck.step, ck.metrics.at("val_acc"));
    };
  });

  // extract-fsa, also reachable as `automata extract`
  std::string ex_ckpt;
  std::string ex_clusters;
  int ex_probes = 0;
  double ex_threshold = 0.0;
  int ex_level = 1;
  std::string ex_output;
  auto extract_action = [&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      ExtractionConfig ec = cfg.extraction;
      ec.seed = g.seed;
      ec.level = ex_level;
      if (!ex_clusters.empty()) std::tie(ec.cluster_min, ec.cluster_max) = parse_range(ex_clusters);
      if (ex_probes > 0) ec.probe_samples = ex_probes;
      if (ex_threshold > 0.0) ec.agreement_threshold = ex_threshold;
      const auto ck = load_checkpoint(ex_ckpt);
      const auto res = extract_fsa(ck.params, ec);
      if (res.warning) {
        std::fprintf(stderr, "warning[%s]: no cluster count in %d..%d reached %.4f; best fidelity %.4f at %d clusters\n",
                     std::string(error_code_name(ErrorCode::kNoFaithfulMachine)).c_str(), ec.cluster_min, ec.cluster_max,
                     ec.agreement_threshold, res.fidelity, res.clusters);
      }
      std::fprintf(stderr, "clusters %d  fidelity %.4f\n", res.clusters, res.fidelity);
      if (ex_output.empty()) {
        std::printf("%s\n", fsa_to_json(res.fsa).c_str());
      } else {
        write_fsa(res.fsa, ex_output);
        print_fsa_summary(res.fsa);
      }
    };
  };
  auto add_extract_flags = [&](CLI::App* sub) {
    sub->add_option("--ckpt", ex_ckpt, "Classifier checkpoint")->required()->check(CLI::ExistingFile);
    sub->add_option("--clusters", ex_clusters, "Cluster count sweep a..b");
    sub->add_option("--probes", ex_probes, "Probe strings")->check(CLI::PositiveNumber);
    sub->add_option("--threshold", ex_threshold, "Agreement threshold");
    sub->add_option("--level", ex_level, "Training level of the classifier (probe distribution)")->check(CLI::PositiveNumber);
    sub->add_option("--output,-o", ex_output, "Write the machine as JSON here instead of stdout");
    sub->callback(extract_action);
  };
  add_extract_flags(app.add_subcommand("extract-fsa", "Extract a finite automaton from a classifier"));
  auto* automata = app.add_subcommand("automata", "Automata utilities");
  automata->require_subcommand(1);
  add_extract_flags(automata->add_subcommand("extract", "Same as extract-fsa"));

  // successor build-data | train | apply
  auto* succ = app.add_subcommand("successor", "Model-successor language model");
  succ->require_subcommand(1);
  auto* sb = succ->add_subcommand("build-data", "Write successor training instances (.enc.txt)");
  std::string sb_steps = "1,2,3";
  int sb_n = 0;
  bool sb_shuffle = false;
  std::vector<std::string> sb_fsas;
  std::string sb_output;
  sb->add_option("--steps", sb_steps, "Source levels k of the k -> k+1 steps");
  sb->add_option("--n-per-step", sb_n, "Instances per step")->check(CLI::PositiveNumber);
  sb->add_flag("--shuffle", sb_shuffle, "Shuffle prefix transition rules");
  sb->add_option("--fsa", sb_fsas, "Source machines (JSON) instead of counter chains")->check(CLI::ExistingFile);
  sb->add_option("--output,-o", sb_output, "Instance file (default <out>/enc/successor.enc.txt)");
  sb->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const int n = sb_n > 0 ? sb_n : cfg.n_per_step;
      const bool shuffle = sb_shuffle || cfg.shuffle;
      Rng rng(derive_seed(g.seed, "successor-data", 0));
      std::vector<TrainingInstance> set;
      if (!sb_fsas.empty()) {
        for (const auto& path : sb_fsas) {
          const Fsa f = read_fsa(path);
          for (int i = 0; i < n; ++i) set.push_back(build_instance(f, rng, shuffle));
        }
      } else {
        set = build_training_set(parse_int_list(sb_steps), n, shuffle, rng);
      }
      const fs::path out = sb_output.empty() ? cfg.out / "enc" / "successor.enc.txt" : fs::path(sb_output);
      write_instances(set, out);
      std::printf("%s  %zu instances\n", out.string().c_str(), set.size());
    };
  });
  auto* st = succ->add_subcommand("train", "Train the successor LM");
  std::string st_data;
  std::string st_ckpt;
  int st_steps = 0;
  st->add_option("--data", st_data, "Instance file")->required()->check(CLI::ExistingFile);
  st->add_option("--ckpt", st_ckpt, "Checkpoint path (default <out>/ckpt/successor.ckpt)");
  st->add_option("--steps", st_steps, "Training steps")->check(CLI::PositiveNumber);
  st->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      std::vector<LmExample> ex;
      for (const auto& inst : read_instances(st_data)) ex.push_back(inst.example());
      TrainConfig tc = cfg.lm;
      tc.seed = derive_seed(g.seed, "lm", 0);
      if (st_steps > 0) tc.steps = st_steps;
      const auto ck = train_lm(ex, kInputVocab, kModelVocab, tc, progress_printer);
      const fs::path path = st_ckpt.empty() ? cfg.out / "ckpt" / "successor.ckpt" : fs::path(st_ckpt);
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      save_checkpoint(ck, path);
      std::printf("%s  best step %d  val_token_acc %.4f\n", path.string().c_str(), ck.step, ck.metrics.at("val_token_acc"));
    };
  });
  auto* sa = succ->add_subcommand("apply", "Apply the successor LM to a machine");
  std::string sa_ckpt;
  std::string sa_fsa;
  int sa_counter = 0;
  int sa_times = 1;
  bool sa_shuffle = false;
  std::string sa_output;
  sa->add_option("--ckpt", sa_ckpt, "Successor LM checkpoint")->required()->check(CLI::ExistingFile);
  auto* sa_fsa_opt = sa->add_option("--fsa", sa_fsa, "Input machine (JSON)")->check(CLI::ExistingFile);
  sa->add_option("--counter", sa_counter, "Use counter_fsa(m) as input")->excludes(sa_fsa_opt)->check(CLI::PositiveNumber);
  sa->add_option("--times", sa_times, "Successive applications")->check(CLI::PositiveNumber);
  sa->add_flag("--shuffle", sa_shuffle, "Shuffle the prompt's transition rules");
  sa->add_option("--output,-o", sa_output, "Write the final machine as JSON");
  sa->callback([&] {
    action = [&] {
      if (sa_fsa.empty() && sa_counter == 0) throw Error(ErrorCode::kInvalidArgument, "successor apply needs --fsa or --counter");
      const auto lm = load_checkpoint(sa_ckpt);
      const Fsa start = sa_fsa.empty() ? counter_fsa(sa_counter) : read_fsa(sa_fsa);
      Rng rng(derive_seed(g.seed, "apply", 0));
      const auto chain = apply_ind_iter(lm.params, start, sa_times, rng, sa_shuffle);
      for (std::size_t i = 0; i < chain.size(); ++i) {
        const bool exact = fsa_isomorphic(chain[i], counter_fsa(static_cast<int>(chain[i].num_states()) - 1));
        std::printf("step %zu: %zu states%s\n", i + 1, chain[i].num_states(), exact ? "  (counter chain)" : "");
      }
      if (!sa_output.empty()) write_fsa(chain.back(), sa_output);
      print_fsa_summary(chain.back());
    };
  });

  // eval dgr
  auto* ev = app.add_subcommand("eval", "Evaluation");
  ev->require_subcommand(1);
  auto* ed = ev->add_subcommand("dgr", "Graceful-degradation score of a hypothesis");
  int ed_k = 0;
  int ed_horizon = 0;
  std::string ed_weights;
  std::string ed_mode;
  std::string ed_ckpt;
  std::string ed_fsa;
  std::string ed_lm;
  std::string ed_csv;
  int ed_n = 0;
  ed->add_option("--k", ed_k, "Highest trained level")->check(CLI::PositiveNumber);
  ed->add_option("--horizon", ed_horizon, "Last scored level")->check(CLI::PositiveNumber);
  ed->add_option("--weights", ed_weights, "uniform, delta, or a level,weight file");
  ed->add_option("--mode", ed_mode, "normalized or raw")->check(CLI::IsMember({"normalized", "raw"}));
  ed->add_option("--ckpt", ed_ckpt, "Base classifier checkpoint")->check(CLI::ExistingFile);
  ed->add_option("--fsa", ed_fsa, "Machine h_k (JSON); scored directly, or as the chain seed with --lm")->check(CLI::ExistingFile);
  ed->add_option("--lm", ed_lm, "Successor LM: score the Ind chain grown from --fsa")->check(CLI::ExistingFile);
  ed->add_option("--n-test", ed_n, "Samples per test level")->check(CLI::PositiveNumber);
  ed->add_option("--csv", ed_csv, "Write level,risk,weight,contribution here");
  ed->callback([&] {
    action = [&] {
      RunConfig cfg = resolve(g);
      if (ed_k > 0) cfg.dgr_k = ed_k;
      if (ed_horizon > 0) cfg.dgr_horizon = ed_horizon;
      if (!ed_weights.empty()) cfg.dgr_weights = ed_weights;
      if (!ed_mode.empty()) cfg.dgr_mode = ed_mode;
      if (ed_n > 0) cfg.n_test = ed_n;
      if (ed_ckpt.empty() && ed_fsa.empty()) throw Error(ErrorCode::kInvalidArgument, "eval dgr needs --ckpt or --fsa");
      if (!ed_lm.empty() && ed_fsa.empty()) throw Error(ErrorCode::kInvalidArgument, "--lm needs --fsa as the chain seed");
      const WeightMode mode = cfg.dgr_mode == "raw" ? WeightMode::kRaw : WeightMode::kNormalized;
      DgrWeights w;
      if (cfg.dgr_weights == "uniform") w = DgrWeights::make(WeightKind::kUniform, cfg.dgr_k, cfg.dgr_horizon, mode);
      else if (cfg.dgr_weights == "delta") w = DgrWeights::make(WeightKind::kDelta, cfg.dgr_k, cfg.dgr_horizon, mode);
      else w = DgrWeights::from_file(cfg.dgr_weights, mode);
      LevelTests tests;
      for (const auto& [level, weight] : w.w) {
        (void)weight;
        tests[level] = high_depth_test(level, cfg.n_test, derive_seed(g.seed, "dgr-test", level)).all();
      }
      std::vector<LevelRisk> rows;
      if (!ed_lm.empty()) {
        const auto lm = load_checkpoint(ed_lm);
        const Acceptor base = ed_ckpt.empty() ? Acceptor::of(read_fsa(ed_fsa)) : Acceptor::of(load_checkpoint(ed_ckpt).params);
        Rng rng(derive_seed(g.seed, "dgr", 0));
        const auto rep = dgr_ind(lm.params, read_fsa(ed_fsa), base, cfg.dgr_k, w, tests, rng);
        std::printf("dgr_base %.6f\ndgr_ind %.6f\nepsilon_gain %.6f\n", rep.dgr_base, rep.dgr_ind, rep.epsilon_gain);
        for (const auto& [m, e] : rep.failures) std::fprintf(stderr, "level %d: %s\n", m, e.c_str());
        rows = rep.ind;
      } else {
        const Acceptor a = ed_ckpt.empty() ? Acceptor::of(read_fsa(ed_fsa)) : Acceptor::of(load_checkpoint(ed_ckpt).params);
        for (const auto& [level, weight] : w.w) {
          const double r = risk(a, tests.at(level));
          rows.push_back({level, r, weight, weight * r});
        }
        std::printf("dgr %.6f\n", dgr(a, cfg.dgr_k, w, tests));
      }
      if (!ed_csv.empty()) write_file_atomic(ed_csv, dgr_csv(rows));
    };
  });

  // progression check
  auto* pr = app.add_subcommand("progression", "Difficulty-progression checks");
  pr->require_subcommand(1);
  auto* pc = pr->add_subcommand("check", "Check the data successor between consecutive levels");
  double pc_x = 0.8;
  int pc_max_len = 8;
  std::string pc_levels = "1..4";
  std::string pc_candidates;
  int pc_n = 0;
  pc->add_option("--x", pc_x, "Loop probability of the reference level-step transducer");
  pc->add_option("--max-len", pc_max_len, "Length bound of the compared supports")->check(CLI::PositiveNumber);
  pc->add_option("--levels", pc_levels, "Levels a..b");
  pc->add_option("--candidates", pc_candidates, "JSON file of candidate transducers")->check(CLI::ExistingFile);
  pc->add_option("--n", pc_n, "Samples per level pool")->check(CLI::PositiveNumber);
  pc->callback([&] {
    action = [&] {
      const RunConfig cfg = resolve(g);
      const auto [lo, hi] = parse_range(pc_levels);
      if (hi <= lo) throw Error(ErrorCode::kInvalidArgument, "progression check needs at least two levels");
      std::map<int, Dataset> pools;
      for (int m = lo; m <= hi; ++m) pools.emplace(m, build_dataset(m, pc_n > 0 ? pc_n : cfg.n_train, derive_seed(g.seed, "data", m)));
      const Pfst t = pfst_fig_a1(pc_x);
      const auto k = complexity(t);
      std::printf("K(T) = %d (alphabet %d, states %d, rules %d)\n", k.total, k.alphabet_count, k.state_count, k.rule_count);
      std::printf("k -> k+1  covered  exceeded  tv      uncovered\n");
      bool all = true;
      for (int m = lo; m < hi; ++m) {
        const auto rep = check_eq1(t, pools.at(m), pools.at(m + 1), pc_max_len);
        all = all && rep.support_covered && !rep.support_exceeded;
        std::printf("%d -> %d     %-7s  %-8s  %.4f  %zu\n", m, m + 1, rep.support_covered ? "yes" : "no",
                    rep.support_exceeded ? "yes" : "no", rep.total_variation, rep.uncovered.size());
      }
      if (!pc_candidates.empty()) {
        std::vector<Pfst> cands{t};
        for (auto& c : read_pfst_file(pc_candidates)) cands.push_back(std::move(c));
        const auto gap = check_const_gap(cands, lo, hi, pools, pc_max_len);
        std::printf("constant gap: winner candidate %zu with K = %d, %zu passing\n", gap.winner, gap.winner_complexity.total,
                    gap.passing.size());
        const auto ns = check_no_simpler_subseq(cands[gap.winner], cands, {2, 3}, lo, hi, pools, pc_max_len);
        std::printf("no simpler subsequence (strides 2,3; %zu candidates): %s\n", ns.candidates_checked,
                    ns.holds() ? "holds" : "violated");
      }
      if (!all) std::printf("support conditions not met on every pair\n");
    };
  });

  // repro / report / config
  auto* rp = app.add_subcommand("repro", "Run an experiment end to end, resuming finished stages");
  std::string rp_exp;
  std::string rp_seeds;
  rp->add_option("experiment", rp_exp, "exp1, exp1-length, exp2 or exp3")
      ->required()
      ->check(CLI::IsMember({"exp1", "exp1-length", "exp2", "exp3"}));
  rp->add_option("--seeds", rp_seeds, "Seed list, 1..5 or 1,2,7");
  int rp_status = 0;
  rp->callback([&] {
    action = [&] {
      RunConfig cfg = resolve(g, rp_exp);
      if (!rp_seeds.empty()) cfg.seeds = parse_seed_list(rp_seeds);
      else if (g.seed_set) cfg.seeds = {g.seed};
      const auto res = cmd_repro(cfg, log_line);
      if (!res.ok) {
        for (const auto& m : res.manifests) {
          for (const auto& s : m.stages) {
            if (s.status != StageStatus::kFailed) continue;
            // Stage errors are stored as "CODE: message".
            const auto colon = s.error.find(": ");
            const std::string code = colon == std::string::npos ? "INTERNAL" : s.error.substr(0, colon);
            const std::string msg = colon == std::string::npos ? s.error : s.error.substr(colon + 2);
            std::fprintf(stderr, "error[%s]: seed %llu stage %s: %s\n", code.c_str(), static_cast<unsigned long long>(m.seed),
                         s.name.c_str(), msg.c_str());
            rp_status = 1;
            return;
          }
        }
        rp_status = 1;
        std::fprintf(stderr, "error[INCOMPLETE]: repro %s did not finish every stage\n", cfg.experiment.c_str());
        return;
      }
      std::printf("%s\n", res.report.string().c_str());
    };
  });
  auto* rep = app.add_subcommand("report", "Rebuild an experiment report from persisted metrics");
  std::string rep_dir;
  rep->add_option("dir", rep_dir, "Experiment directory, e.g. runs/exp1")->required();
  rep->callback([&] { action = [&] { std::printf("%s\n", cmd_report(rep_dir).string().c_str()); }; });
  auto* cf = app.add_subcommand("config", "Print the effective run config");
  std::string cf_exp = "custom";
  cf->add_option("--experiment", cf_exp, "Start from this experiment's defaults");
  cf->callback([&] { action = [&] { std::printf("%s", resolve(g, cf_exp).to_text().c_str()); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[USAGE]: %s\n", e.what());
    return 2;
  }
  try {
    if (action) action();
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", std::string(error_code_name(e.code())).c_str(), e.detail().c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[INTERNAL]: %s\n", e.what());
    return 1;
  }
  return rp_status;
}

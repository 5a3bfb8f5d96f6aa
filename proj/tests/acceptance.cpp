// End-to-end acceptance run: one PASS/FAIL line per criterion.
//
//   dyind_acceptance --work DIR [--only 1,4] [--known-red 6]
//
// Exit status is 0 when every criterion passes or is listed in --known-red.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "dyind/error.hpp"
#include "dyind/eval.hpp"
#include "dyind/extract.hpp"
#include "dyind/pipeline.hpp"
#include "dyind/progression.hpp"
#include "dyind/successor.hpp"

using namespace dyind;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::vector<BracketString> all_strings(int max_len) {
  std::vector<BracketString> out;
  for (int len = 0; len <= max_len; ++len) {
    for (unsigned bits = 0; bits < (1U << len); ++bits) {
      BracketString s;
      for (int i = 0; i < len; ++i) s.push_back((bits >> i) & 1U ? Symbol::kClose : Symbol::kOpen);
      out.push_back(s);
    }
  }
  return out;
}

void log_line(const std::string& s) { std::cerr << "  " << s << "\n"; }

// Per-seed metric tables of a finished repro, keyed by table name.
struct Cell {
  std::vector<double> per_seed;
  double mean() const {
    double s = 0;
    for (double v : per_seed) s += v;
    return per_seed.empty() ? 0.0 : s / static_cast<double>(per_seed.size());
  }
};
using Tables = std::map<std::string, std::map<std::pair<std::string, std::string>, Cell>>;

Tables collect(const RunConfig& cfg) {
  Tables out;
  for (auto seed : cfg.seeds) {
    const auto j = json::parse(read_file(run_dir(cfg, seed) / "report" / "metrics.json"));
    for (const auto& t : j.at("tables")) {
      const auto rows = t.at("rows").get<std::vector<std::string>>();
      const auto cols = t.at("cols").get<std::vector<std::string>>();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) {
          out[t.at("name")][{rows[r], cols[c]}].per_seed.push_back(t.at("values")[r][c].get<double>());
        }
      }
    }
  }
  return out;
}

std::string row_of(int m) { return "dyck1-" + std::to_string(m); }

RunConfig exp1_cfg() {
  auto cfg = RunConfig::defaults_for("exp1");
  cfg.out = g_work / "runs";
  return cfg;
}

bool g_exp1_ok = false;
bool ensure_exp1() {
  static bool done = false;
  if (!done) {
    done = true;
    const auto t0 = std::chrono::steady_clock::now();
    g_exp1_ok = cmd_repro(exp1_cfg(), log_line).ok;
    log_line(fmt::format("exp1 repro {:.0f}s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
  }
  return g_exp1_ok;
}

Outcome criterion1() {
  if (!ensure_exp1()) return {false, "exp1 repro did not finish"};
  const auto cfg = exp1_cfg();
  const auto tables = collect(cfg);
  const auto& depth = tables.at("depth");
  bool ok = true;
  std::string detail;
  double worst_low = 1.0, worst_high = 0.0;
  for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
    for (int j = 1; j <= m; ++j) {
      const double a = depth.at({row_of(m), row_of(j)}).mean();
      worst_low = std::min(worst_low, a);
      if (a < 0.99) {
        ok = false;
        detail += fmt::format(" train {} test {} = {:.4f};", m, j, a);
      }
    }
    const double hi = depth.at({row_of(m), row_of(m + 2)}).mean();
    worst_high = std::max(worst_high, hi);
    if (hi > 0.75) {
      ok = false;
      detail += fmt::format(" train {} test {} = {:.4f};", m, m + 2, hi);
    }
  }
  return {ok, fmt::format("min acc on levels <= m {:.4f}, max acc at m+2 {:.4f}{}", worst_low, worst_high, detail)};
}

Outcome criterion2() {
  if (!ensure_exp1()) return {false, "exp1 repro did not finish"};
  const auto cfg = exp1_cfg();
  const auto tables = collect(cfg);
  const auto& length = tables.at("length");
  double worst = 1.0;
  for (int m = cfg.level_min; m <= cfg.level_max; ++m) {
    for (const char* col : {"21-40", "41-60"}) worst = std::min(worst, length.at({row_of(m), col}).mean());
  }
  return {worst >= 0.99, fmt::format("min mean accuracy at lengths 21-40 / 41-60: {:.4f}", worst)};
}

Outcome criterion3() {
  auto cfg = RunConfig::defaults_for("exp2");
  cfg.out = g_work / "runs";
  if (!cmd_repro(cfg, log_line).ok) return {false, "exp2 repro did not finish"};
  const auto tables = collect(cfg);
  const auto& t = tables.at("continual");
  const std::string row = "dyck1-1-2-3-4";
  double low = 1.0;
  for (int j = 1; j <= 4; ++j) low = std::min(low, t.at({row, row_of(j)}).mean());
  const double five = t.at({row, row_of(5)}).mean();
  return {low >= 0.99 && five <= 0.75, fmt::format("min acc on depths 1..4 {:.4f}, depth 5 {:.4f}", low, five)};
}

struct LmTrial {
  int ok = 0;
  int total = 0;
  int first_fail = 0;
  double dgr_ind = -1;
  double cpu = 0;
  std::string first_error;
};

LmTrial successor_trial(bool shuffle) {
  const auto base = RunConfig::defaults_for("exp3");
  const double c0 = cpu_seconds();
  Rng data_rng(derive_seed(1, shuffle ? "acceptance-shuffled" : "acceptance", 0));
  std::vector<LmExample> ex;
  for (const auto& inst : build_training_set({1, 2, 3}, base.n_per_step, shuffle, data_rng)) ex.push_back(inst.example());
  auto lm_cfg = base.lm;
  lm_cfg.seed = derive_seed(1, "lm", shuffle);
  const auto ck = train_lm(ex, kInputVocab, kModelVocab, lm_cfg);
  LmTrial t;
  Rng rng(derive_seed(1, "acceptance-apply", shuffle));
  for (int m = 4; m <= 51; ++m) {
    for (int r = 0; r < 20; ++r) {
      ++t.total;
      std::string err;
      try {
        if (fsa_isomorphic(apply_ind(ck.params, counter_fsa(m), rng, shuffle), counter_fsa(m + 1))) {
          ++t.ok;
          continue;
        }
        err = "wrong machine";
      } catch (const Error& e) {
        err = e.what();
      }
      if (t.first_fail == 0) {
        t.first_fail = m;
        t.first_error = err;
      }
    }
  }
  t.cpu = cpu_seconds() - c0;

  const auto w = DgrWeights::make(WeightKind::kDelta, 3, 52, WeightMode::kRaw);
  LevelTests tests;
  for (const auto& [level, weight] : w.w) tests[level] = high_depth_test(level, 2000, derive_seed(1, "dgr-test", level)).all();
  const auto rep = dgr_ind(ck.params, counter_fsa(3), Acceptor::of(counter_fsa(3)), 3, w, tests, rng);
  t.dgr_ind = rep.dgr_ind;
  log_line(fmt::format("successor lm shuffle={} step {} val token acc {:.4f} apply {}/{} dgr_ind {} cpu {:.0f}s",
                       shuffle, ck.step, ck.metrics.at("val_token_acc"), t.ok, t.total, t.dgr_ind, t.cpu));
  return t;
}

Outcome criterion4() {
  const auto plain = successor_trial(false);
  const auto shuffled = successor_trial(true);
  auto describe = [](const char* name, const LmTrial& t) {
    std::string s = fmt::format("{}: {}/{} namings, dgr_ind {}, {:.0f}s cpu", name, t.ok, t.total, t.dgr_ind, t.cpu);
    if (t.first_fail) s += fmt::format(" (first failure m={}: {})", t.first_fail, t.first_error);
    return s;
  };
  auto good = [](const LmTrial& t) { return t.ok == t.total && t.dgr_ind == 0.0 && t.cpu <= 300.0; };
  return {good(plain) && good(shuffled), describe("ordered", plain) + "; " + describe("shuffled", shuffled)};
}

Outcome criterion5() {
  std::vector<Dataset> sets;
  const auto cfg = RunConfig::defaults_for("exp1");
  for (int m = 1; m <= 4; ++m) sets.push_back(build_dataset(m, cfg.n_train, derive_seed(1, "data", m)));
  const auto rep = estimate_entropy(sets);
  bool ok = true;
  std::string vals;
  for (std::size_t i = 0; i < rep.size(); ++i) {
    vals += fmt::format(" {:.2f}/{:.2f}", rep[i].non_cumulative_bits, rep[i].cumulative_bits);
    if (i > 0) {
      ok = ok && rep[i].non_cumulative_bits > rep[i - 1].non_cumulative_bits &&
           rep[i].cumulative_bits > rep[i - 1].cumulative_bits;
    }
  }
  return {ok, "non-cumulative/cumulative bits per level:" + vals};
}

Outcome criterion6() {
  const auto t = pfst_fig_a1(0.8);
  int checked = 0, bad = 0;
  for (const auto& s : all_strings(10)) {
    const bool valid = is_valid(s);
    const auto d = pfst_output_distribution(t, s);
    for (const auto& [out, p] : d.probs) {
      if (p <= 0) continue;
      ++checked;
      if (is_valid(out) != valid) ++bad;
      if (valid && depth(out) != depth(s) && depth(out) != depth(s) + 1) ++bad;
    }
  }
  const auto cfg = RunConfig::defaults_for("exp1");
  const auto d1 = build_dataset(1, cfg.n_train, derive_seed(1, "data", 1));
  const auto d2 = build_dataset(2, cfg.n_train, derive_seed(1, "data", 2));
  const auto rep = check_eq1(t, d1, d2, 8);
  return {bad == 0 && rep.support_covered && !rep.support_exceeded,
          fmt::format("{} property violations over {} outputs; eq1 covered={} exceeded={} tv={:.4f}", bad, checked,
                      rep.support_covered, rep.support_exceeded, rep.total_variation)};
}

Outcome criterion7() {
  int good = 0, total = 0;
  for (int i = 0; i < 20; ++i) {
    Rng rng(5000 + static_cast<std::uint64_t>(i));
    const bool lm = i % 2 == 1;
    const std::size_t vocab = 3 + rng.below(5);
    const std::size_t hidden = 2 + rng.below(6);
    auto p = lm ? RnnParams::init(Task::kLanguageModel, vocab, 2 + rng.below(4), hidden, vocab, false, rng)
                : RnnParams::init(Task::kClassifier, vocab, vocab, hidden, 2, true, rng);
    std::vector<ClassifierExample> cb;
    std::vector<LmExample> lb;
    const int batch = 1 + static_cast<int>(rng.below(4));
    for (int b = 0; b < batch; ++b) {
      std::vector<int> toks;
      std::vector<bool> mask;
      const int len = 1 + static_cast<int>(rng.below(8));
      for (int j = 0; j < len; ++j) {
        toks.push_back(static_cast<int>(rng.below(vocab)));
        mask.push_back(rng.below(3) != 0);
      }
      cb.push_back({toks, static_cast<int>(rng.below(2))});
      lb.push_back({toks, mask});
    }
    auto loss = [&] { return lm ? lm_loss(p, lb) : classifier_loss(p, cb); };
    const auto g = lm ? lm_backward(p, lb) : classifier_backward(p, cb);
    auto pt = p.tensors();
    const auto gt = g.grad.tensors();
    for (std::size_t k = 0; k < pt.size(); ++k) {
      if (k == 0 && !p.embed_trainable) continue;
      for (std::size_t c = 0; c < pt[k].size(); ++c) {
        const double orig = pt[k][c];
        pt[k][c] = orig + 1e-5;
        const double up = loss();
        pt[k][c] = orig - 1e-5;
        const double down = loss();
        pt[k][c] = orig;
        const double fd = (up - down) / 2e-5;
        if (std::abs(gt[k][c]) <= 1e-8 && std::abs(fd) <= 1e-8) continue;
        ++total;
        good += std::abs(fd - gt[k][c]) / std::max(std::abs(fd), std::abs(gt[k][c])) <= 1e-4;
      }
    }
  }
  return {total > 0 && good >= 0.99 * total, fmt::format("{}/{} coordinates within 1e-4", good, total)};
}

// Distinct residual languages of reachable states, by suffixes up to 8.
std::size_t nerode_classes(const Fsa& f) {
  static const auto suffixes = all_strings(8);
  std::set<int> reach{f.initial};
  std::vector<int> todo{f.initial};
  while (!todo.empty()) {
    const int q = todo.back();
    todo.pop_back();
    for (Symbol c : kAlphabet) {
      const int r = f.edge(q, c);
      if (r != kNoEdge && reach.insert(r).second) todo.push_back(r);
    }
  }
  std::set<std::vector<bool>> classes;
  for (int q : reach) {
    std::vector<bool> sig;
    bool any = false;
    for (const auto& s : suffixes) {
      int cur = q;
      for (std::size_t i = 0; i < s.size(); ++i) {
        cur = f.edge(cur, s[i]);
        if (cur == kNoEdge) break;
      }
      sig.push_back(cur != kNoEdge && f.accepting[static_cast<std::size_t>(cur)]);
      any = any || sig.back();
    }
    if (any) classes.insert(sig);
  }
  return std::max<std::size_t>(classes.size(), 1);
}

Outcome criterion8() {
  int counter_bad = 0;
  for (int m = 1; m <= 8; ++m) {
    const auto f = counter_fsa(m);
    for (const auto& s : all_strings(2 * m + 4)) counter_bad += fsa_accepts(f, s) != (is_valid(s) && depth(s) <= m);
  }
  Rng rng(8);
  int min_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    Fsa f;
    const int n = 1 + static_cast<int>(rng.below(8));
    for (int q = 0; q < n; ++q) f.add_state("s" + std::to_string(q), rng.below(3) == 0);
    for (int q = 0; q < n; ++q) {
      for (Symbol c : kAlphabet) {
        if (rng.below(4) != 0) f.set_edge(q, c, static_cast<int>(rng.below(static_cast<std::uint64_t>(n))));
      }
    }
    const auto mf = minimize(f);
    min_bad += mf.num_states() != nerode_classes(f) || !fsa_equiv_bounded(f, mf, 12);
  }
  // Every chain that fits the 52-letter vocabulary; counter_fsa(52) has 53
  // states and must be refused.
  int trip_bad = 0;
  for (int m = 1; m <= 51; ++m) {
    for (int r = 0; r < 20; ++r) {
      const auto f = counter_fsa(m);
      const auto enc = encode_fsa(f, NamingMap::random(f.num_states(), rng), r % 2 == 1, rng);
      trip_bad += !fsa_isomorphic(minimize(decode_encoding(enc.tokens)), f);
    }
  }
  bool refused = false;
  try {
    encode_fsa(counter_fsa(52), NamingMap{});
  } catch (const Error& e) {
    refused = e.code() == ErrorCode::kTooManyStates;
  }
  return {counter_bad == 0 && min_bad == 0 && trip_bad == 0 && refused,
          fmt::format("counter mismatches {}, minimize mismatches {}/1000, round-trip failures {}/1020, 53-state "
                      "chain refused {}",
                      counter_bad, min_bad, trip_bad, refused)};
}

Outcome criterion9() {
  if (!ensure_exp1()) return {false, "exp1 repro did not finish"};
  const auto cfg = exp1_cfg();
  bool ok = true;
  std::string detail;
  for (int m = 1; m <= 4; ++m) {
    int good = 0;
    for (auto seed : cfg.seeds) {
      const auto ck = load_checkpoint(run_dir(cfg, seed) / "ckpt" / (row_of(m) + ".ckpt"));
      auto ec = cfg.extraction;
      ec.level = m;
      ec.seed = derive_seed(seed, "extract", m);
      const auto r = extract_fsa(ck.params, ec);
      const bool iso = fsa_isomorphic(r.fsa, counter_fsa(m));
      good += iso && r.fidelity >= 0.995 && !r.warning;
      log_line(fmt::format("extract m={} seed={}: {} states fidelity {:.4f} iso {}", m, seed, r.fsa.num_states(),
                           r.fidelity, iso));
    }
    detail += fmt::format(" m={}: {}/5", m, good);
    ok = ok && good >= 4;
  }
  return {ok, "isomorphic and faithful:" + detail};
}

Outcome criterion10() {
  std::vector<std::map<std::string, std::string>> reports;
  for (int i = 0; i < 2; ++i) {
    auto cfg = RunConfig::defaults_for("exp3");
    cfg.out = g_work / fmt::format("exp3-run{}", i);
    fs::remove_all(cfg.out);
    const auto res = cmd_repro(cfg, log_line);
    if (!res.ok) return {false, fmt::format("exp3 run {} did not finish", i + 1)};
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(experiment_dir(cfg))) {
      if (!e.is_regular_file()) continue;
      const auto relp = fs::relative(e.path(), experiment_dir(cfg)).string();
      // Manifests carry wall-clock stage times; everything else must match.
      if (e.path().filename() == "manifest.json") continue;
      files[relp] = read_file(e.path());
    }
    reports.push_back(std::move(files));
    if (i == 0) {
      const auto j = json::parse(read_file(run_dir(cfg, cfg.seeds.front()) / "report" / "metrics.json"));
      log_line(fmt::format("exp3 dgr_base {} dgr_ind {} apply {}", j.at("dgr_base").get<double>(),
                           j.at("dgr_ind").get<double>(), j.at("apply").dump()));
    }
  }
  std::vector<std::string> diff;
  for (const auto& [name, body] : reports[0]) {
    auto it = reports[1].find(name);
    if (it == reports[1].end() || it->second != body) diff.push_back(name);
  }
  for (const auto& [name, body] : reports[1]) {
    if (!reports[0].count(name)) diff.push_back(name);
  }
  std::string detail = fmt::format("{} files compared, {} differ", reports[0].size(), diff.size());
  for (std::size_t i = 0; i < diff.size() && i < 5; ++i) detail += " " + diff[i];
  return {diff.empty(), detail};
}

std::set<int> parse_ints(const std::string& s) {
  std::set<int> out;
  for (const auto v : parse_seed_list(s)) out.insert(static_cast<int>(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, known_red;
  g_work = fs::temp_directory_path() / "dyind_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (i + 1 >= argc) {
      std::cerr << "usage: dyind_acceptance [--work DIR] [--only LIST] [--known-red LIST]\n";
      return 2;
    }
    if (a == "--work") g_work = argv[++i];
    else if (a == "--only") only = parse_ints(argv[++i]);
    else if (a == "--known-red") known_red = parse_ints(argv[++i]);
    else {
      std::cerr << "unknown flag " << a << "\n";
      return 2;
    }
  }
  fs::create_directories(g_work);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  int unexpected = 0;
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool known = !o.pass && known_red.count(n);
    std::cout << fmt::format("criterion {:2} {} ({:.0f}s): {}{}\n", n, o.pass ? "PASS" : "FAIL", secs, o.detail,
                             known ? " [known red]" : "")
              << std::flush;
    if (!o.pass && !known) ++unexpected;
  }
  return unexpected == 0 ? 0 : 1;
}

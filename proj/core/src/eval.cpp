#include "dyind/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "dyind/error.hpp"
#include "dyind/successor.hpp"

namespace dyind {

Acceptor Acceptor::of(const Fsa& fsa) {
  return Acceptor([fsa](const BracketString& s) { return fsa_accepts(fsa, s) ? Label::kValid : Label::kInvalid; });
}

Acceptor Acceptor::of(const RnnParams& classifier) {
  return Acceptor([classifier](const BracketString& s) { return classify(classifier, s); });
}

Acceptor Acceptor::constant(Label label) {
  return Acceptor([label](const BracketString&) { return label; });
}

double risk(const Acceptor& a, const std::vector<LabeledSample>& test) {
  if (test.empty()) throw Error(ErrorCode::kEmptyPool, "risk on an empty test pool");
  std::size_t wrong = 0;
  for (const auto& s : test) wrong += a.decide(s.sequence) != s.label ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

double risk(const Acceptor& a, const Dataset& test) { return risk(a, test.all()); }

DgrWeights DgrWeights::make(WeightKind kind, int k, int horizon, WeightMode mode) {
  if (horizon <= k) throw Error(ErrorCode::kInvalidArgument, "horizon must exceed k");
  DgrWeights out;
  out.mode = mode;
  const double n = static_cast<double>(horizon - k);
  for (int m = k + 1; m <= horizon; ++m) out.w[m] = kind == WeightKind::kUniform ? 1.0 / n : 1.0;
  if (mode == WeightMode::kNormalized && kind == WeightKind::kDelta) {
    for (auto& [m, v] : out.w) v = 1.0 / n;
  }
  return out;
}

DgrWeights DgrWeights::from_file(const std::filesystem::path& path, WeightMode mode) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  DgrWeights out;
  out.mode = mode;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    int level = 0;
    char comma = 0;
    double w = 0.0;
    if (!(ls >> level >> comma >> w) || comma != ',') {
      throw Error(ErrorCode::kParseError, path.string() + ":" + std::to_string(lineno) + ": expected 'level,weight'");
    }
    out.w[level] = w;
  }
  if (mode == WeightMode::kNormalized) {
    const double t = out.total();
    if (t <= 0.0) throw Error(ErrorCode::kInvalidArgument, "weights sum to zero");
    for (auto& [m, v] : out.w) v /= t;
  }
  out.validate();
  return out;
}

double DgrWeights::total() const {
  double t = 0.0;
  for (const auto& [m, v] : w) t += v;
  return t;
}

void DgrWeights::validate() const {
  for (const auto& [m, v] : w) {
    if (!(v >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "negative weight at level " + std::to_string(m));
  }
  if (mode == WeightMode::kNormalized && std::abs(total() - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("normalized weights sum to {}", total()));
  }
}

namespace {

const std::vector<LabeledSample>& test_at(const LevelTests& tests, int m) {
  auto it = tests.find(m);
  if (it == tests.end()) throw Error(ErrorCode::kMissingLevel, "no test set for level " + std::to_string(m));
  return it->second;
}

void check_levels(int k, const DgrWeights& weights) {
  weights.validate();
  for (const auto& [m, v] : weights.w) {
    if (m <= k) throw Error(ErrorCode::kInvalidArgument, fmt::format("weight at level {} is not above k={}", m, k));
  }
}

}  // namespace

Dataset high_depth_test(int level, int n, std::uint64_t seed) {
  DatasetOptions opts;
  opts.max_length = 2 * level + 16;
  return build_dataset(level, n, seed, opts);
}

double dgr(const Acceptor& a, int k, const DgrWeights& weights, const LevelTests& tests) {
  check_levels(k, weights);
  double total = 0.0;
  for (const auto& [m, w] : weights.w) total += w * risk(a, test_at(tests, m));
  return total;
}

DgrReport dgr_ind(const RnnParams& lm, const Fsa& h_k, const Acceptor& base, int k, const DgrWeights& weights,
                  const LevelTests& tests, Rng& rng) {
  check_levels(k, weights);
  DgrReport rep;
  rep.k = k;
  rep.mode = weights.mode;
  rep.horizon = weights.w.empty() ? k : weights.w.rbegin()->first;
  for (const auto& [m, w] : weights.w) test_at(tests, m);

  Fsa cur = minimize(h_k);
  std::string broken;
  for (int m = k + 1; m <= rep.horizon; ++m) {
    if (broken.empty()) {
      try {
        cur = apply_ind(lm, cur, rng);
      } catch (const Error& e) {
        broken = e.what();
        rep.failures.emplace_back(m, broken);
      }
    } else {
      rep.failures.emplace_back(m, "chain broken earlier: " + broken);
    }
    auto it = weights.w.find(m);
    if (it == weights.w.end()) continue;
    const auto& test = test_at(tests, m);
    const double r_ind = broken.empty() ? risk(Acceptor::of(cur), test) : 1.0;
    const double r_base = risk(base, test);
    rep.ind.push_back({m, r_ind, it->second, it->second * r_ind});
    rep.base.push_back({m, r_base, it->second, it->second * r_base});
    rep.dgr_ind += it->second * r_ind;
    rep.dgr_base += it->second * r_base;
  }
  rep.epsilon_gain = rep.dgr_base - rep.dgr_ind;
  return rep;
}

bool inductive_learnability_check(const DgrScore& base, const DgrScore& ind, double epsilon) {
  if (!(base.weights == ind.weights)) {
    throw Error(ErrorCode::kWeightMismatch, "base and inductive DGR use different weights");
  }
  return base.value - ind.value >= epsilon;
}

std::string dgr_csv(const std::vector<LevelRisk>& rows) {
  std::string out = "level,risk,weight,contribution\n";
  for (const auto& r : rows) out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", r.level, r.risk, r.weight, r.contribution);
  return out;
}

double AccuracyMatrix::mean(std::size_t r, std::size_t c) const {
  const auto& v = values.at(r).at(c);
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double AccuracyMatrix::stddev(std::size_t r, std::size_t c) const {
  const auto& v = values.at(r).at(c);
  if (v.size() < 2) return 0.0;
  const double mu = mean(r, c);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AccuracyMatrix build_accuracy_matrix(const std::vector<std::string>& rows, const std::vector<std::uint64_t>& seeds,
                                     const std::map<RunKey, Checkpoint>& runs,
                                     const std::vector<std::pair<std::string, std::vector<LabeledSample>>>& tests) {
  if (seeds.empty()) throw Error(ErrorCode::kMissingRun, "no seeds");
  AccuracyMatrix m;
  m.rows = rows;
  for (const auto& [name, pool] : tests) m.cols.push_back(name);
  m.values.assign(rows.size(), std::vector<std::vector<double>>(tests.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (auto seed : seeds) {
      auto it = runs.find({rows[r], seed});
      if (it == runs.end()) throw Error(ErrorCode::kMissingRun, fmt::format("no run for {} seed {}", rows[r], seed));
      for (std::size_t c = 0; c < tests.size(); ++c) {
        m.values[r][c].push_back(evaluate_accuracy(it->second, tests[c].second));
      }
    }
  }
  return m;
}

std::string accuracy_markdown(const AccuracyMatrix& m, const std::string& corner) {
  std::string out = "| " + corner + " |";
  std::string rule = "|---|";
  for (const auto& c : m.cols) {
    out += " " + c + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    out += "| " + m.rows[r] + " |";
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      out += fmt::format(" {:.1f} ± {:.1f} |", 100.0 * m.mean(r, c), 100.0 * m.stddev(r, c));
    }
    out += "\n";
  }
  return out;
}

std::string accuracy_csv(const AccuracyMatrix& m) {
  std::string out = "row,col,mean,std,n\n";
  for (std::size_t r = 0; r < m.rows.size(); ++r) {
    for (std::size_t c = 0; c < m.cols.size(); ++c) {
      out += fmt::format("{},{},{:.6f},{:.6f},{}\n", m.rows[r], m.cols[c], m.mean(r, c), m.stddev(r, c),
                         m.values[r][c].size());
    }
  }
  return out;
}

std::string entropy_markdown(const EntropyReport& report) {
  std::string out = "| level | non-cumulative (bits) | cumulative (bits) | support |\n|---|---|---|---|\n";
  for (const auto& e : report) {
    out += fmt::format("| {} | {:.2f} | {:.2f} | {} |\n", e.level, e.non_cumulative_bits, e.cumulative_bits,
                       e.support_size);
  }
  return out;
}

}  // namespace dyind

#include "dyind/progression.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "dyind/error.hpp"

namespace dyind {

namespace {

constexpr int kEpsStepLimit = 10'000;
constexpr std::string_view kEpsilonText = "ε";

// Rules grouped by (state, input) for simulation.
struct RuleIndex {
  // [state][0 = '(', 1 = ')', 2 = epsilon] -> rule indices
  std::vector<std::array<std::vector<std::size_t>, 3>> groups;

  explicit RuleIndex(const Pfst& t) : groups(t.states.size()) {
    for (std::size_t i = 0; i < t.rules.size(); ++i) {
      const auto& r = t.rules[i];
      if (r.src < 0 || r.src >= static_cast<int>(t.states.size()) || r.dst < 0 ||
          r.dst >= static_cast<int>(t.states.size())) {
        throw Error(ErrorCode::kInvalidArgument, "rule references an unknown state");
      }
      const int g = r.input ? symbol_index(*r.input) : 2;
      groups[static_cast<std::size_t>(r.src)][static_cast<std::size_t>(g)].push_back(i);
    }
  }

  const std::vector<std::size_t>& eps(int q) const { return groups[static_cast<std::size_t>(q)][2]; }
  const std::vector<std::size_t>& on(int q, Symbol s) const {
    return groups[static_cast<std::size_t>(q)][static_cast<std::size_t>(symbol_index(s))];
  }
  bool consumes(int q) const { return !on(q, Symbol::kOpen).empty() || !on(q, Symbol::kClose).empty(); }
  bool may_halt(int q) const { return eps(q).empty() || consumes(q); }
};

}  // namespace

std::vector<Symbol> Pfst::in_alphabet() const {
  std::set<char> seen;
  for (const auto& r : rules) {
    if (r.input) seen.insert(static_cast<char>(*r.input));
  }
  std::vector<Symbol> out;
  for (char c : seen) out.push_back(static_cast<Symbol>(c));
  return out;
}

std::vector<Symbol> Pfst::out_alphabet() const {
  std::set<char> seen;
  for (const auto& r : rules) {
    for (char c : r.output.str()) seen.insert(c);
  }
  std::vector<Symbol> out;
  for (char c : seen) out.push_back(static_cast<Symbol>(c));
  return out;
}

void Pfst::validate() const {
  if (states.empty()) throw Error(ErrorCode::kInvalidArgument, "transducer has no states");
  if (initial < 0 || initial >= static_cast<int>(states.size())) {
    throw Error(ErrorCode::kInvalidArgument, "initial state out of range");
  }
  const RuleIndex index(*this);
  for (std::size_t q = 0; q < states.size(); ++q) {
    for (const auto& group : index.groups[q]) {
      if (group.empty()) continue;
      double sum = 0.0;
      for (auto i : group) {
        const double p = rules[i].prob;
        if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidProb, "rule probability outside (0,1]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        throw Error(ErrorCode::kInvalidProb, "rule group at state " + states[q] + " sums to " + std::to_string(sum));
      }
    }
  }
}

Pfst pfst_fig_a1(double x) {
  if (!(x > 0.0 && x <= 1.0)) throw Error(ErrorCode::kInvalidProb, "loop probability must lie in (0, 1]");
  Pfst t;
  t.states = {"q0", "q1"};
  t.initial = 0;
  for (Symbol s : kAlphabet) {
    BracketString out;
    out.push_back(s);
    t.rules.push_back({0, s, out, 0, x});
    if (x < 1.0) t.rules.push_back({0, s, out, 1, 1.0 - x});
  }
  // With x = 1 the zero-probability jumps are dropped; q1 stays, unreachable.
  t.rules.push_back({1, std::nullopt, BracketString::parse("()"), 0, 1.0});
  // Order rules as loop '(' , loop ')', jump '(', jump ')', epsilon.
  std::stable_sort(t.rules.begin(), t.rules.end(), [](const PfstRule& a, const PfstRule& b) {
    auto key = [](const PfstRule& r) { return r.input ? (r.dst == 0 ? 0 : 1) : 2; };
    return key(a) < key(b);
  });
  return t;
}

BracketString apply_pfst(const Pfst& t, const BracketString& s, Rng& rng) {
  const RuleIndex index(t);
  BracketString out;
  int q = t.initial;
  std::size_t pos = 0;
  int eps_steps = 0;
  auto pick = [&](const std::vector<std::size_t>& group) -> const PfstRule& {
    const double u = rng.uniform();
    double acc = 0.0;
    for (auto i : group) {
      acc += t.rules[i].prob;
      if (u < acc) return t.rules[i];
    }
    return t.rules[group.back()];
  };
  while (true) {
    const auto& eps = index.eps(q);
    const bool at_end = pos == s.size();
    const std::vector<std::size_t>* consume = at_end ? nullptr : &index.on(q, s[pos]);
    const bool can_advance = at_end ? index.may_halt(q) : !consume->empty();
    if (eps.empty() && !can_advance) {
      throw Error(ErrorCode::kStuck, "no rule at state " + t.states[static_cast<std::size_t>(q)] +
                                         " on input position " + std::to_string(pos));
    }
    const bool take_eps = !eps.empty() && (!can_advance || rng.bernoulli(0.5));
    if (take_eps) {
      if (++eps_steps > kEpsStepLimit) throw Error(ErrorCode::kStuck, "epsilon loop does not terminate");
      const auto& r = pick(eps);
      out.append(r.output);
      q = r.dst;
      continue;
    }
    if (at_end) return out;
    const auto& r = pick(*consume);
    out.append(r.output);
    q = r.dst;
    ++pos;
    eps_steps = 0;
  }
}

namespace {

struct Config {
  int state;
  std::string output;
  double prob;
  int eps_steps;
};

// Enumerates all rule choices. `on_output` receives (output, prob) for every
// halting path, merged at position boundaries.
template <typename OnOutput>
double enumerate_paths(const Pfst& t, const RuleIndex& index, const BracketString& s,
                       const EnumerationLimits& limits, OnOutput&& on_output) {
  if (s.size() > limits.max_input_len) {
    throw Error(ErrorCode::kEnumerationTooLarge,
                "input length " + std::to_string(s.size()) + " exceeds " + std::to_string(limits.max_input_len));
  }
  double lost = 0.0;
  std::map<std::pair<int, std::string>, double> frontier;
  frontier[{t.initial, std::string()}] = 1.0;
  for (std::size_t pos = 0; pos <= s.size(); ++pos) {
    const bool at_end = pos == s.size();
    std::map<std::pair<int, std::string>, double> next;
    std::deque<Config> work;
    for (auto& [key, p] : frontier) work.push_back({key.first, key.second, p, 0});
    frontier.clear();
    while (!work.empty()) {
      Config c = std::move(work.front());
      work.pop_front();
      const auto& eps = index.eps(c.state);
      const std::vector<std::size_t>* consume = at_end ? nullptr : &index.on(c.state, s[pos]);
      const bool can_advance = at_end ? index.may_halt(c.state) : !consume->empty();
      const int groups = (eps.empty() ? 0 : 1) + (can_advance ? 1 : 0);
      if (groups == 0) {
        lost += c.prob;
        continue;
      }
      const double w = c.prob / groups;
      for (auto i : eps) {
        const auto& r = t.rules[i];
        std::string out = c.output + r.output.str();
        if (out.size() > limits.max_output_len || c.eps_steps + 1 > kEpsStepLimit) {
          lost += w * r.prob;
          continue;
        }
        work.push_back({r.dst, std::move(out), w * r.prob, c.eps_steps + 1});
        if (work.size() > limits.max_configs) {
          throw Error(ErrorCode::kEnumerationTooLarge, "epsilon closure exceeds the configuration limit");
        }
      }
      if (!can_advance) continue;
      if (at_end) {
        on_output(c.output, w);
        continue;
      }
      for (auto i : *consume) {
        const auto& r = t.rules[i];
        std::string out = c.output + r.output.str();
        if (out.size() > limits.max_output_len) {
          lost += w * r.prob;
          continue;
        }
        next[{r.dst, std::move(out)}] += w * r.prob;
      }
      if (next.size() > limits.max_configs) {
        throw Error(ErrorCode::kEnumerationTooLarge, "frontier exceeds the configuration limit");
      }
    }
    frontier = std::move(next);
  }
  return lost;
}

}  // namespace

OutputDistribution pfst_output_distribution(const Pfst& t, const BracketString& s, const EnumerationLimits& limits) {
  const RuleIndex index(t);
  OutputDistribution dist;
  std::map<std::string, double> acc;
  dist.lost_mass = enumerate_paths(t, index, s, limits, [&](const std::string& out, double p) { acc[out] += p; });
  for (auto& [out, p] : acc) dist.probs.emplace(BracketString::parse(out), p);
  return dist;
}

namespace {

bool in_language(const BracketString& b, int max_depth) { return is_valid(b) && depth(b) <= max_depth; }

std::map<BracketString, double> empirical_valid(const Dataset& ds, int max_len) {
  std::map<BracketString, double> counts;
  std::size_t n = 0;
  auto add = [&](const std::vector<LabeledSample>& samples) {
    for (const auto& s : samples) {
      if (s.label == Label::kValid && s.length <= max_len) {
        counts[s.sequence] += 1.0;
        ++n;
      }
    }
  };
  add(ds.train);
  add(ds.val);
  for (auto& [_, c] : counts) c /= static_cast<double>(n);
  return counts;
}

struct PushResult {
  std::map<BracketString, double> pushed;
  std::vector<BracketString> exceeding;
};

// Pushes `source` through t over outputs of length <= max_len. With
// stop_on_exceed the first out-of-language output aborts the push.
PushResult push_forward(const Pfst& t, const std::map<BracketString, double>& source, int target_level,
                        int max_len, bool stop_on_exceed, std::size_t max_configs) {
  const RuleIndex index(t);
  EnumerationLimits limits;
  limits.max_output_len = static_cast<std::size_t>(max_len);
  limits.max_configs = max_configs;
  PushResult res;
  std::set<BracketString> bad;
  for (const auto& [a, pa] : source) {
    std::map<std::string, double> acc;
    enumerate_paths(t, index, a, limits, [&](const std::string& out, double p) { acc[out] += p; });
    for (const auto& [out, p] : acc) {
      if (p <= 0.0) continue;
      auto b = BracketString::parse(out);
      if (!in_language(b, target_level)) {
        bad.insert(b);
        if (stop_on_exceed) {
          res.exceeding.assign(bad.begin(), bad.end());
          return res;
        }
      }
      res.pushed[b] += pa * p;
    }
  }
  res.exceeding.assign(bad.begin(), bad.end());
  return res;
}

bool passes_support(const Pfst& t, const Dataset& src, const Dataset& dst, int max_len, std::size_t max_configs) {
  const auto source = empirical_valid(src, max_len);
  const auto target = empirical_valid(dst, max_len);
  PushResult push;
  try {
    push = push_forward(t, source, dst.level, max_len, true, max_configs);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEnumerationTooLarge) return false;
    throw;
  }
  if (!push.exceeding.empty()) return false;
  for (const auto& [b, _] : target) {
    auto it = push.pushed.find(b);
    if (it == push.pushed.end() || it->second <= 0.0) return false;
  }
  return true;
}

const Dataset& pool_at(const std::map<int, Dataset>& pools, int level) {
  auto it = pools.find(level);
  if (it == pools.end()) throw Error(ErrorCode::kMissingLevel, "no pool for level " + std::to_string(level));
  return it->second;
}

}  // namespace

SuccCheckReport check_eq1(const Pfst& t, const Dataset& pool_k, const Dataset& pool_k1, int max_len) {
  SuccCheckReport rep;
  rep.level = pool_k.level;
  rep.target_level = pool_k1.level;
  rep.max_len = max_len;
  const auto source = empirical_valid(pool_k, max_len);
  const auto target = empirical_valid(pool_k1, max_len);
  const auto push = push_forward(t, source, pool_k1.level, max_len, false, EnumerationLimits{}.max_configs);

  rep.exceeding = push.exceeding;
  rep.support_exceeded = !push.exceeding.empty();

  rep.support_covered = true;
  double z = 0.0;
  for (const auto& [b, _] : target) {
    auto it = push.pushed.find(b);
    if (it == push.pushed.end() || it->second <= 0.0) {
      rep.support_covered = false;
      rep.uncovered.push_back(b);
    } else {
      z += it->second;
    }
  }
  if (z <= 0.0) {
    rep.total_variation = 1.0;
  } else {
    double tv = 0.0;
    for (const auto& [b, q] : target) {
      auto it = push.pushed.find(b);
      const double p = it == push.pushed.end() ? 0.0 : it->second / z;
      tv += std::abs(p - q);
    }
    rep.total_variation = std::clamp(0.5 * tv, 0.0, 1.0);
  }
  return rep;
}

TransducerComplexity complexity(const Pfst& t) {
  std::set<char> alphabet;
  for (Symbol s : t.in_alphabet()) alphabet.insert(static_cast<char>(s));
  for (Symbol s : t.out_alphabet()) alphabet.insert(static_cast<char>(s));
  TransducerComplexity c;
  c.alphabet_count = static_cast<int>(alphabet.size());
  c.state_count = static_cast<int>(t.states.size());
  c.rule_count = static_cast<int>(t.rules.size());
  c.total = c.alphabet_count + c.state_count + c.rule_count;
  return c;
}

ConstGapReport check_const_gap(const std::vector<Pfst>& candidates, int lo, int hi,
                               const std::map<int, Dataset>& pools, int max_len) {
  if (candidates.empty()) throw Error(ErrorCode::kNoCandidatePasses, "no candidates");
  ConstGapReport rep;
  bool found = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    bool ok = true;
    for (int k = lo; k < hi && ok; ++k) {
      const auto r = check_eq1(candidates[i], pool_at(pools, k), pool_at(pools, k + 1), max_len);
      ok = r.support_covered && !r.support_exceeded;
    }
    if (!ok) continue;
    const auto c = complexity(candidates[i]);
    rep.passing.emplace_back(i, c.total);
    if (!found || c.total < rep.winner_complexity.total) {
      rep.winner = i;
      rep.winner_complexity = c;
      found = true;
    }
  }
  if (!found) {
    throw Error(ErrorCode::kNoCandidatePasses, "no candidate satisfies the support conditions on levels " +
                                                   std::to_string(lo) + ".." + std::to_string(hi));
  }
  return rep;
}

NoSimplerReport check_no_simpler_subseq(const Pfst& winner, const std::vector<Pfst>& candidates,
                                        const std::vector<int>& strides, int lo, int hi,
                                        const std::map<int, Dataset>& pools, int max_len) {
  NoSimplerReport rep;
  rep.strides = strides;
  const int bound = complexity(winner).total;
  constexpr std::size_t kSearchConfigs = 20'000;
  for (int stride : strides) {
    if (stride < 2) throw Error(ErrorCode::kInvalidArgument, "strides must be >= 2");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const int total = complexity(candidates[i]).total;
      if (total >= bound) continue;
      ++rep.candidates_checked;
      bool ok = true;
      bool any_pair = false;
      for (int k = lo; k + stride <= hi && ok; k += stride) {
        any_pair = true;
        ok = passes_support(candidates[i], pool_at(pools, k), pool_at(pools, k + stride), max_len, kSearchConfigs);
      }
      if (any_pair && ok) rep.violations.push_back({stride, i, total});
    }
  }
  return rep;
}

namespace {

std::vector<BracketString> outputs_up_to(int max_len) {
  std::vector<BracketString> outs{BracketString()};
  std::vector<BracketString> layer{BracketString()};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<BracketString> grown;
    for (const auto& s : layer) {
      for (Symbol c : kAlphabet) {
        BracketString t = s;
        t.push_back(c);
        grown.push_back(t);
      }
    }
    outs.insert(outs.end(), grown.begin(), grown.end());
    layer = std::move(grown);
  }
  return outs;
}

bool structurally_sound(const Pfst& t) {
  const RuleIndex index(t);
  const auto n = t.states.size();
  // Every state consumes both symbols or is epsilon-only; a state with no
  // rules only makes sense as an end-of-input halt.
  for (std::size_t q = 0; q < n; ++q) {
    const int qi = static_cast<int>(q);
    const bool open = !index.on(qi, Symbol::kOpen).empty();
    const bool close = !index.on(qi, Symbol::kClose).empty();
    if (open != close) return false;
  }
  // All states reachable from the initial one.
  std::vector<bool> seen(n, false);
  std::vector<int> stack{t.initial};
  seen[static_cast<std::size_t>(t.initial)] = true;
  while (!stack.empty()) {
    const int q = stack.back();
    stack.pop_back();
    for (const auto& r : t.rules) {
      if (r.src == q && !seen[static_cast<std::size_t>(r.dst)]) {
        seen[static_cast<std::size_t>(r.dst)] = true;
        stack.push_back(r.dst);
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) return false;
  // No cycle made only of epsilon-only states (it could never halt).
  for (std::size_t q = 0; q < n; ++q) {
    const int qi = static_cast<int>(q);
    if (index.consumes(qi) || index.eps(qi).empty()) continue;
    std::vector<bool> visited(n, false);
    std::vector<int> st{qi};
    while (!st.empty()) {
      const int u = st.back();
      st.pop_back();
      for (auto i : index.eps(u)) {
        const int v = t.rules[i].dst;
        if (index.consumes(v)) continue;
        if (v == qi) return false;
        if (!visited[static_cast<std::size_t>(v)]) {
          visited[static_cast<std::size_t>(v)] = true;
          st.push_back(v);
        }
      }
    }
  }
  return true;
}

void uniform_weights(Pfst& t) {
  const RuleIndex index(t);
  for (const auto& per_state : index.groups) {
    for (const auto& group : per_state) {
      for (auto i : group) t.rules[i].prob = 1.0 / static_cast<double>(group.size());
    }
  }
}

}  // namespace

std::vector<Pfst> enumerate_pfsts(int max_total, int max_states, int max_output_len) {
  std::vector<Pfst> out;
  const auto outputs = outputs_up_to(max_output_len);
  for (int n = 1; n <= max_states; ++n) {
    // Consuming both input symbols already costs two alphabet entries.
    const int max_rules = max_total - 2 - n;
    if (max_rules < 2) continue;
    std::vector<PfstRule> universe;
    for (int src = 0; src < n; ++src) {
      for (int in = 0; in < 3; ++in) {
        for (const auto& o : outputs) {
          for (int dst = 0; dst < n; ++dst) {
            std::optional<Symbol> input;
            if (in < 2) input = kAlphabet[static_cast<std::size_t>(in)];
            universe.push_back({src, input, o, dst, 1.0});
          }
        }
      }
    }
    Pfst base;
    for (int q = 0; q < n; ++q) base.states.push_back("q" + std::to_string(q));
    std::vector<std::size_t> chosen;
    // Depth-first over increasing index subsets of size <= max_rules.
    auto recurse = [&](auto&& self, std::size_t start) -> void {
      if (!chosen.empty()) {
        Pfst t = base;
        for (auto i : chosen) t.rules.push_back(universe[i]);
        if (structurally_sound(t) && complexity(t).total <= max_total) {
          uniform_weights(t);
          out.push_back(std::move(t));
        }
      }
      if (static_cast<int>(chosen.size()) == max_rules) return;
      for (std::size_t i = start; i < universe.size(); ++i) {
        chosen.push_back(i);
        self(self, i + 1);
        chosen.pop_back();
      }
    };
    recurse(recurse, 0);
  }
  return out;
}

nlohmann::json pfst_to_json(const Pfst& t) {
  nlohmann::ordered_json j;
  j["states"] = t.states;
  j["initial"] = t.states.at(static_cast<std::size_t>(t.initial));
  j["rules"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rules) {
    nlohmann::ordered_json jr;
    jr["src"] = t.states[static_cast<std::size_t>(r.src)];
    jr["input"] = r.input ? std::string(1, static_cast<char>(*r.input)) : std::string(kEpsilonText);
    jr["output"] = r.output.str();
    jr["dst"] = t.states[static_cast<std::size_t>(r.dst)];
    jr["prob"] = r.prob;
    j["rules"].push_back(jr);
  }
  return nlohmann::json::parse(j.dump());
}

Pfst pfst_from_json(const nlohmann::json& j) {
  try {
    Pfst t;
    t.states = j.at("states").get<std::vector<std::string>>();
    auto index_of = [&](const std::string& name) {
      auto it = std::find(t.states.begin(), t.states.end(), name);
      if (it == t.states.end()) throw Error(ErrorCode::kParseError, "unknown state '" + name + "'");
      return static_cast<int>(it - t.states.begin());
    };
    t.initial = index_of(j.at("initial").get<std::string>());
    for (const auto& jr : j.at("rules")) {
      PfstRule r;
      r.src = index_of(jr.at("src").get<std::string>());
      r.dst = index_of(jr.at("dst").get<std::string>());
      const auto in = jr.at("input").get<std::string>();
      if (in == kEpsilonText || in.empty()) {
        r.input = std::nullopt;
      } else if (in == "(" || in == ")") {
        r.input = static_cast<Symbol>(in[0]);
      } else {
        throw Error(ErrorCode::kParseError, "bad rule input '" + in + "'");
      }
      r.output = BracketString::parse(jr.at("output").get<std::string>());
      r.prob = jr.at("prob").get<double>();
      t.rules.push_back(std::move(r));
    }
    t.validate();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("transducer json: ") + e.what());
  }
}

std::vector<Pfst> read_pfst_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  std::vector<Pfst> out;
  if (j.is_array()) {
    for (const auto& item : j) out.push_back(pfst_from_json(item));
  } else {
    out.push_back(pfst_from_json(j));
  }
  return out;
}

}  // namespace dyind

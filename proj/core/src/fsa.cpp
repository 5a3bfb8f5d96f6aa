#include "dyind/fsa.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dyind/error.hpp"

namespace dyind {

std::size_t Fsa::num_transitions() const {
  std::size_t n = 0;
  for (const auto& e : next) n += (e[0] != kNoEdge) + (e[1] != kNoEdge);
  return n;
}

int Fsa::add_state(std::string name, bool accept) {
  names.push_back(std::move(name));
  accepting.push_back(accept);
  next.push_back({kNoEdge, kNoEdge});
  return static_cast<int>(names.size()) - 1;
}

int Fsa::find(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

Fsa counter_fsa(int m) {
  if (m < 1) throw Error(ErrorCode::kInvalidArgument, "counter_fsa needs m >= 1");
  Fsa f;
  for (int i = 0; i <= m; ++i) f.add_state("q" + std::to_string(i), i == 0);
  for (int i = 0; i <= m; ++i) {
    if (i < m) f.set_edge(i, Symbol::kOpen, i + 1);
    if (i > 0) f.set_edge(i, Symbol::kClose, i - 1);
  }
  return f;
}

bool fsa_accepts(const Fsa& fsa, const BracketString& s) {
  if (fsa.num_states() == 0) return false;
  int q = fsa.initial;
  for (std::size_t i = 0; i < s.size(); ++i) {
    q = fsa.edge(q, s[i]);
    if (q == kNoEdge) return false;
  }
  return fsa.accepting[static_cast<std::size_t>(q)];
}

namespace {

// Induced sub-machine on `keep`, in the given order.
Fsa restrict_to(const Fsa& fsa, const std::vector<int>& keep) {
  std::vector<int> remap(fsa.num_states(), kNoEdge);
  for (std::size_t i = 0; i < keep.size(); ++i) remap[static_cast<std::size_t>(keep[i])] = static_cast<int>(i);
  Fsa out;
  for (int q : keep) out.add_state(fsa.names[static_cast<std::size_t>(q)], fsa.accepting[static_cast<std::size_t>(q)]);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    for (int a = 0; a < 2; ++a) {
      const int d = fsa.next[static_cast<std::size_t>(keep[i])][static_cast<std::size_t>(a)];
      out.next[i][static_cast<std::size_t>(a)] = d == kNoEdge ? kNoEdge : remap[static_cast<std::size_t>(d)];
    }
  }
  out.initial = remap[static_cast<std::size_t>(fsa.initial)];
  return out;
}

Fsa empty_language() {
  Fsa f;
  f.add_state("q0", false);
  return f;
}

}  // namespace

Fsa trim(const Fsa& fsa) {
  const std::size_t n = fsa.num_states();
  if (n == 0) return empty_language();
  std::vector<bool> reach(n, false);
  std::deque<int> queue{fsa.initial};
  reach[static_cast<std::size_t>(fsa.initial)] = true;
  while (!queue.empty()) {
    const int q = queue.front();
    queue.pop_front();
    for (int d : fsa.next[static_cast<std::size_t>(q)]) {
      if (d != kNoEdge && !reach[static_cast<std::size_t>(d)]) {
        reach[static_cast<std::size_t>(d)] = true;
        queue.push_back(d);
      }
    }
  }
  // Co-reachability by fixed point; machines here are small.
  std::vector<bool> live(n, false);
  for (std::size_t q = 0; q < n; ++q) live[q] = fsa.accepting[q];
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t q = 0; q < n; ++q) {
      if (live[q]) continue;
      for (int d : fsa.next[q]) {
        if (d != kNoEdge && live[static_cast<std::size_t>(d)]) {
          live[q] = true;
          changed = true;
          break;
        }
      }
    }
  }
  if (!live[static_cast<std::size_t>(fsa.initial)]) return empty_language();
  std::vector<int> keep;
  for (std::size_t q = 0; q < n; ++q) {
    if (reach[q] && live[q]) keep.push_back(static_cast<int>(q));
  }
  return restrict_to(fsa, keep);
}

Fsa canonical(const Fsa& fsa) {
  if (fsa.num_states() == 0) return fsa;
  std::vector<int> order;
  std::vector<bool> seen(fsa.num_states(), false);
  std::deque<int> queue{fsa.initial};
  seen[static_cast<std::size_t>(fsa.initial)] = true;
  while (!queue.empty()) {
    const int q = queue.front();
    queue.pop_front();
    order.push_back(q);
    for (Symbol s : kAlphabet) {
      const int d = fsa.edge(q, s);
      if (d != kNoEdge && !seen[static_cast<std::size_t>(d)]) {
        seen[static_cast<std::size_t>(d)] = true;
        queue.push_back(d);
      }
    }
  }
  Fsa out = restrict_to(fsa, order);
  for (std::size_t i = 0; i < out.names.size(); ++i) out.names[i] = "q" + std::to_string(i);
  return out;
}

Fsa minimize(const Fsa& fsa) {
  const Fsa t = trim(fsa);
  const std::size_t n = t.num_states();
  // Moore refinement. A missing edge plays the role of the sink's block (-1);
  // after trimming every remaining state is live, so the sink's class is
  // distinct from all of them.
  std::vector<int> block(n);
  for (std::size_t q = 0; q < n; ++q) block[q] = t.accepting[q] ? 1 : 0;
  for (;;) {
    std::map<std::array<int, 3>, int> ids;
    std::vector<int> refined(n);
    for (std::size_t q = 0; q < n; ++q) {
      std::array<int, 3> sig{block[q], -1, -1};
      for (int a = 0; a < 2; ++a) {
        const int d = t.next[q][static_cast<std::size_t>(a)];
        sig[static_cast<std::size_t>(a + 1)] = d == kNoEdge ? -1 : block[static_cast<std::size_t>(d)];
      }
      auto [it, inserted] = ids.emplace(sig, static_cast<int>(ids.size()));
      refined[q] = it->second;
    }
    const bool stable = ids.size() == std::set<int>(block.begin(), block.end()).size();
    block = std::move(refined);
    if (stable) break;
  }
  const int nb = *std::max_element(block.begin(), block.end()) + 1;
  Fsa q;
  q.names.resize(static_cast<std::size_t>(nb));
  q.accepting.assign(static_cast<std::size_t>(nb), false);
  q.next.assign(static_cast<std::size_t>(nb), {kNoEdge, kNoEdge});
  for (std::size_t s = 0; s < n; ++s) {
    const auto b = static_cast<std::size_t>(block[s]);
    q.names[b] = t.names[s];
    q.accepting[b] = t.accepting[s];
    for (int a = 0; a < 2; ++a) {
      const int d = t.next[s][static_cast<std::size_t>(a)];
      q.next[b][static_cast<std::size_t>(a)] = d == kNoEdge ? kNoEdge : block[static_cast<std::size_t>(d)];
    }
  }
  q.initial = block[static_cast<std::size_t>(t.initial)];
  return canonical(q);
}

bool fsa_isomorphic(const Fsa& a, const Fsa& b) {
  const Fsa ca = canonical(a);
  const Fsa cb = canonical(b);
  return ca.next == cb.next && ca.accepting == cb.accepting && ca.initial == cb.initial;
}

bool fsa_equiv_bounded(const Fsa& a, const Fsa& b, int max_len) {
  if (max_len < 0 || max_len > 24) throw Error(ErrorCode::kInvalidArgument, "max_len must lie in [0, 24]");
  auto acc = [](const Fsa& f, int q) { return q != kNoEdge && f.accepting[static_cast<std::size_t>(q)]; };
  // Breadth-first over the product; a pair reached at depth d covers every
  // string of that length leading to it, so each pair needs visiting once.
  std::set<std::pair<int, int>> seen;
  std::vector<std::pair<int, int>> frontier{{a.num_states() ? a.initial : kNoEdge, b.num_states() ? b.initial : kNoEdge}};
  seen.insert(frontier[0]);
  for (int len = 0; len <= max_len && !frontier.empty(); ++len) {
    std::vector<std::pair<int, int>> next;
    for (auto [p, q] : frontier) {
      if (acc(a, p) != acc(b, q)) return false;
      if (p == kNoEdge && q == kNoEdge) continue;
      for (Symbol s : kAlphabet) {
        const int np = p == kNoEdge ? kNoEdge : a.edge(p, s);
        const int nq = q == kNoEdge ? kNoEdge : b.edge(q, s);
        if (seen.insert({np, nq}).second) next.emplace_back(np, nq);
      }
    }
    frontier = std::move(next);
  }
  return true;
}

std::string fsa_to_json(const Fsa& fsa) {
  nlohmann::ordered_json j;
  j["states"] = fsa.names;
  j["initial"] = fsa.names.at(static_cast<std::size_t>(fsa.initial));
  j["accepting"] = nlohmann::ordered_json::array();
  for (std::size_t q = 0; q < fsa.num_states(); ++q) {
    if (fsa.accepting[q]) j["accepting"].push_back(fsa.names[q]);
  }
  j["transitions"] = nlohmann::ordered_json::array();
  for (std::size_t q = 0; q < fsa.num_states(); ++q) {
    for (Symbol s : kAlphabet) {
      const int d = fsa.edge(static_cast<int>(q), s);
      if (d == kNoEdge) continue;
      j["transitions"].push_back(
          {{"src", fsa.names[q]}, {"sym", std::string(1, static_cast<char>(s))}, {"dst", fsa.names[static_cast<std::size_t>(d)]}});
    }
  }
  return j.dump(2);
}

Fsa fsa_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Fsa f;
    for (const auto& n : j.at("states")) {
      const auto name = n.get<std::string>();
      if (f.find(name) >= 0) throw Error(ErrorCode::kParseError, "duplicate state " + name);
      f.add_state(name);
    }
    auto lookup = [&](const std::string& name) {
      const int q = f.find(name);
      if (q < 0) throw Error(ErrorCode::kParseError, "unknown state " + name);
      return q;
    };
    f.initial = lookup(j.at("initial").get<std::string>());
    for (const auto& n : j.at("accepting")) f.accepting[static_cast<std::size_t>(lookup(n.get<std::string>()))] = true;
    for (const auto& t : j.at("transitions")) {
      const int src = lookup(t.at("src").get<std::string>());
      const int dst = lookup(t.at("dst").get<std::string>());
      const auto sym = t.at("sym").get<std::string>();
      if (sym != "(" && sym != ")") throw Error(ErrorCode::kParseError, "bad symbol '" + sym + "'");
      const Symbol s = static_cast<Symbol>(sym[0]);
      const int old = f.edge(src, s);
      if (old != kNoEdge && old != dst) {
        throw Error(ErrorCode::kDuplicateEdge, "two targets for (" + f.names[static_cast<std::size_t>(src)] + ", " + sym + ")");
      }
      f.set_edge(src, s, dst);
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("fsa json: ") + e.what());
  }
}

void write_fsa(const Fsa& fsa, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << fsa_to_json(fsa) << "\n";
}

Fsa read_fsa(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return fsa_from_json(ss.str());
}

}  // namespace dyind

#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dyind/error.hpp"
#include "dyind/extract.hpp"
#include "dyind/fsa.hpp"
#include "dyind/train.hpp"

using namespace dyind;

namespace {

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

Fsa random_fsa(Rng& rng) {
  Fsa f;
  const int n = 1 + static_cast<int>(rng.below(8));
  for (int i = 0; i < n; ++i) f.add_state("s" + std::to_string(i), rng.below(3) == 0);
  for (int i = 0; i < n; ++i) {
    for (Symbol sym : {Symbol::kOpen, Symbol::kClose}) {
      if (rng.below(4) != 0) f.set_edge(i, sym, static_cast<int>(rng.below(n)));
    }
  }
  return f;
}

bool accepts_from(const Fsa& f, int q, const BracketString& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    q = f.edge(q, s[i]);
    if (q == kNoEdge) return false;
  }
  return f.accepting[static_cast<std::size_t>(q)];
}

// Myhill-Nerode classes over reachable states with a non-empty residual,
// distinguishing by every suffix up to length 8.
std::size_t nerode_classes(const Fsa& f) {
  const auto suffixes = all_strings(8);
  std::set<int> reach{f.initial};
  std::vector<int> todo{f.initial};
  while (!todo.empty()) {
    const int q = todo.back();
    todo.pop_back();
    for (Symbol c : {Symbol::kOpen, Symbol::kClose}) {
      const int r = f.edge(q, c);
      if (r != kNoEdge && reach.insert(r).second) todo.push_back(r);
    }
  }
  std::set<std::vector<bool>> classes;
  for (int q : reach) {
    std::vector<bool> sig;
    bool any = false;
    for (const auto& s : suffixes) {
      sig.push_back(accepts_from(f, q, s));
      any = any || sig.back();
    }
    if (any) classes.insert(sig);
  }
  return classes.size();
}

Fsa relabelled(const Fsa& f, Rng& rng) {
  const std::size_t n = f.num_states();
  std::vector<int> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
  rng.shuffle(std::span<int>(perm));
  Fsa g;
  g.names.resize(n);
  g.accepting.resize(n);
  g.next.assign(n, {kNoEdge, kNoEdge});
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(perm[i]);
    g.names[j] = "x" + std::to_string(j);
    g.accepting[j] = f.accepting[i];
    for (int c = 0; c < 2; ++c) g.next[j][static_cast<std::size_t>(c)] = f.next[i][static_cast<std::size_t>(c)] == kNoEdge ? kNoEdge : perm[static_cast<std::size_t>(f.next[i][static_cast<std::size_t>(c)])];
  }
  g.initial = perm[static_cast<std::size_t>(f.initial)];
  return g;
}

}  // namespace

TEST(Fsa, CounterMatchesOracleExhaustively) {
  for (int m = 1; m <= 8; ++m) {
    const auto f = counter_fsa(m);
    EXPECT_EQ(f.num_states(), static_cast<std::size_t>(m + 1));
    EXPECT_EQ(f.num_transitions(), static_cast<std::size_t>(2 * m));
    for (const auto& s : all_strings(2 * m + 4)) {
      ASSERT_EQ(fsa_accepts(f, s), is_valid(s) && depth(s) <= m) << m << " " << s.str();
    }
  }
}

TEST(Fsa, CounterShape) {
  const auto f = counter_fsa(3);
  EXPECT_EQ(f.initial, 0);
  EXPECT_TRUE(f.accepting[0]);
  for (std::size_t i = 1; i < f.num_states(); ++i) EXPECT_FALSE(f.accepting[i]);
  EXPECT_EQ(f.edge(3, Symbol::kOpen), kNoEdge);
  EXPECT_EQ(f.edge(0, Symbol::kClose), kNoEdge);
  EXPECT_EQ(minimize(counter_fsa(52)).num_states(), 53U);
}

TEST(Fsa, MinimizeMatchesBruteForceNerode) {
  Rng rng(17);
  for (int i = 0; i < 400; ++i) {
    const auto f = random_fsa(rng);
    const auto m = minimize(f);
    const auto classes = nerode_classes(f);
    if (classes == 0) {
      ASSERT_EQ(m.num_states(), 1U);
      ASSERT_FALSE(m.accepting[0]);
    } else {
      ASSERT_EQ(m.num_states(), classes) << fsa_to_json(f);
    }
    ASSERT_TRUE(fsa_equiv_bounded(f, m, 12));
    ASSERT_EQ(minimize(m), m);
  }
}

TEST(Fsa, IsomorphismIgnoresStateIds) {
  Rng rng(5);
  EXPECT_TRUE(fsa_isomorphic(counter_fsa(3), relabelled(counter_fsa(3), rng)));
  EXPECT_FALSE(fsa_isomorphic(counter_fsa(3), counter_fsa(4)));
  for (int i = 0; i < 100; ++i) {
    const auto f = minimize(random_fsa(rng));
    ASSERT_TRUE(fsa_isomorphic(f, relabelled(f, rng)));
  }
}

TEST(Fsa, BoundedEquivalence) {
  EXPECT_FALSE(fsa_equiv_bounded(counter_fsa(2), counter_fsa(3), 8));
  // The two machines first disagree on "((()))".
  EXPECT_TRUE(fsa_equiv_bounded(counter_fsa(2), counter_fsa(3), 5));
  EXPECT_THROW(fsa_equiv_bounded(counter_fsa(2), counter_fsa(3), 40), Error);
}

TEST(Fsa, TrimDropsDeadStates) {
  auto f = counter_fsa(2);
  const int dead = f.add_state("dead");
  f.set_edge(2, Symbol::kOpen, dead);
  EXPECT_TRUE(fsa_isomorphic(trim(f), counter_fsa(2)));
  EXPECT_TRUE(fsa_isomorphic(minimize(f), counter_fsa(2)));
}

TEST(Fsa, JsonRoundTripAndDuplicates) {
  const auto f = counter_fsa(4);
  EXPECT_EQ(fsa_from_json(fsa_to_json(f)), f);
  const std::string dup = R"({"states":["q0","q1"],"initial":"q0","accepting":["q0"],
    "transitions":[{"src":"q0","sym":"(","dst":"q1"},{"src":"q0","sym":"(","dst":"q0"}]})";
  try {
    fsa_from_json(dup);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateEdge);
  }
  EXPECT_THROW(fsa_from_json("{not json"), Error);
}

TEST(Extract, AnalyticRnnSimulatesMachine) {
  for (int m = 1; m <= 4; ++m) {
    const auto f = counter_fsa(m);
    const auto p = rnn_from_fsa(f);
    for (const auto& s : all_strings(10)) {
      ASSERT_EQ(classify(p, s) == Label::kValid, fsa_accepts(f, s)) << s.str();
    }
  }
}

TEST(Extract, RecoversCounterFromAnalyticRnn) {
  for (int m = 1; m <= 3; ++m) {
    ExtractionConfig cfg;
    cfg.level = m;
    cfg.probe_samples = 3000;
    cfg.cluster_max = 12;
    cfg.restarts = 5;
    cfg.seed = 3;
    const auto r = extract_fsa(rnn_from_fsa(counter_fsa(m)), cfg);
    EXPECT_FALSE(r.warning) << m;
    EXPECT_GE(r.fidelity, 0.995);
    EXPECT_TRUE(fsa_isomorphic(r.fsa, counter_fsa(m))) << fsa_to_json(r.fsa);
    EXPECT_FALSE(r.sweep.empty());
  }
}

TEST(Extract, ConstantRnnGivesOneState) {
  Rng rng(1);
  const auto p = RnnParams::init(Task::kClassifier, 2, 2, 4, 2, true, rng).zeros_like();
  ExtractionConfig cfg;
  cfg.probe_samples = 500;
  cfg.cluster_max = 3;
  cfg.restarts = 2;
  const auto r = extract_fsa(p, cfg);
  EXPECT_EQ(r.fsa.num_states(), 1U);
  EXPECT_DOUBLE_EQ(r.fidelity, 1.0);
}

TEST(Extract, KMeansSeparatesObviousClusters) {
  std::vector<double> pts;
  for (int i = 0; i < 50; ++i) {
    pts.push_back(0.0 + 0.001 * i);
    pts.push_back(10.0 + 0.001 * i);
  }
  Rng rng(2);
  const auto km = kmeans(pts, 1, 2, 3, 50, rng);
  ASSERT_EQ(km.centroids.size(), 2U);
  const std::vector<double> a{0.01}, b{10.02};
  EXPECT_NE(nearest_centroid(km, 1, a), nearest_centroid(km, 1, b));
}

TEST(Extract, ProbeMix) {
  Rng rng(4);
  const auto probes = probe_strings(2, 1000, 20, 6, rng);
  ASSERT_EQ(probes.size(), 1000U);
  int short_ones = 0;
  for (const auto& s : probes) {
    ASSERT_LE(s.size(), 20U);
    short_ones += s.size() <= 6;
  }
  EXPECT_GE(short_ones, 500);
}

TEST(Extract, ConfigValidation) {
  ExtractionConfig cfg;
  cfg.cluster_min = 5;
  cfg.cluster_max = 2;
  EXPECT_THROW(cfg.validate(), Error);
}

#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dyind/error.hpp"
#include "dyind/progression.hpp"

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

// A pool holding exactly the given strings, labelled by the oracle.
Dataset pool_of(int level, const std::vector<BracketString>& strings) {
  Dataset ds;
  ds.level = level;
  for (const auto& s : strings) ds.train.push_back(LabeledSample::of(s));
  return ds;
}

// pool_{k+1} = exact pushforward support of pool_k through t.
std::map<int, Dataset> pushforward_pools(const Pfst& t, int lo, int hi, int max_len) {
  std::map<int, Dataset> pools;
  std::vector<BracketString> cur;
  for (const auto& s : all_strings(max_len)) {
    if (is_valid(s) && !s.empty() && depth(s) <= lo) cur.push_back(s);
  }
  pools[lo] = pool_of(lo, cur);
  for (int k = lo + 1; k <= hi; ++k) {
    std::set<BracketString> next;
    for (const auto& s : cur) {
      for (const auto& [out, p] : pfst_output_distribution(t, s).probs) {
        if (p > 0 && static_cast<int>(out.size()) <= max_len) next.insert(out);
      }
    }
    cur.assign(next.begin(), next.end());
    pools[k] = pool_of(k, cur);
  }
  return pools;
}

Pfst identity_pfst() {
  Pfst t;
  t.states = {"q0"};
  t.initial = 0;
  t.rules.push_back({0, Symbol::kOpen, BracketString::parse("("), 0, 1.0});
  t.rules.push_back({0, Symbol::kClose, BracketString::parse(")"), 0, 1.0});
  return t;
}

// The reference transducer plus an unreachable third state.
Pfst redundant_variant(double x) {
  Pfst t = pfst_fig_a1(x);
  t.states.push_back("q2");
  t.rules.push_back({2, std::nullopt, BracketString::parse("()"), 0, 1.0});
  return t;
}

}  // namespace

TEST(Pfst, ReferenceStructure) {
  const auto t = pfst_fig_a1(0.8);
  EXPECT_EQ(t.states.size(), 2U);
  EXPECT_EQ(t.rules.size(), 5U);
  const auto k = complexity(t);
  EXPECT_EQ(k.alphabet_count, 2);
  EXPECT_EQ(k.state_count, 2);
  EXPECT_EQ(k.rule_count, 5);
  EXPECT_EQ(k.total, 9);
  EXPECT_NO_THROW(t.validate());
}

TEST(Pfst, InvalidLoopProbability) {
  EXPECT_THROW(pfst_fig_a1(0.0), Error);
  EXPECT_THROW(pfst_fig_a1(1.5), Error);
  EXPECT_NO_THROW(pfst_fig_a1(1.0));
}

TEST(Pfst, IdentityComplexityAndUnreachableState) {
  EXPECT_EQ(complexity(identity_pfst()).total, 5);
  EXPECT_EQ(complexity(redundant_variant(0.8)).state_count, complexity(pfst_fig_a1(0.8)).state_count + 1);
  auto t = pfst_fig_a1(0.8);
  const int before = complexity(t).total;
  t.states.push_back("unused");
  EXPECT_EQ(complexity(t).total, before + 1);
}

TEST(Pfst, LoopOnlyCopiesInput) {
  Rng rng(1);
  const auto t = pfst_fig_a1(1.0);
  EXPECT_EQ(apply_pfst(t, BracketString::parse("()"), rng).str(), "()");
  const auto d = pfst_output_distribution(t, BracketString::parse("()"));
  ASSERT_EQ(d.probs.size(), 1U);
  EXPECT_NEAR(d.probs.begin()->second, 1.0, 1e-12);
}

TEST(Pfst, HalfLoopDistributionOnPair) {
  const auto d = pfst_output_distribution(pfst_fig_a1(0.5), BracketString::parse("()"));
  // Brute-force path enumeration: four paths, four distinct outputs.
  std::map<std::string, double> got;
  double total = 0.0;
  for (const auto& [s, p] : d.probs) {
    got[s.str()] = p;
    total += p;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  ASSERT_EQ(got.size(), 4U);
  for (const char* s : {"()", "(())", "()()", "(())()"}) EXPECT_NEAR(got[s], 0.25, 1e-12) << s;
}

TEST(Pfst, JumpOnFirstSymbolNests) {
  const auto d = pfst_output_distribution(pfst_fig_a1(0.5), BracketString::parse("()"));
  EXPECT_GT(d.probs.at(BracketString::parse("(())")), 0.0);
}

TEST(Pfst, OpenStringStaysInvalid) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto out = apply_pfst(pfst_fig_a1(0.5), BracketString::parse("("), rng);
    EXPECT_FALSE(is_valid(out));
    EXPECT_EQ(balance_profile(out).final_balance, 1);
  }
}

TEST(Pfst, ExhaustiveDepthAndBalanceProperties) {
  const auto t = pfst_fig_a1(0.8);
  for (const auto& s : all_strings(10)) {
    const auto d = pfst_output_distribution(t, s);
    double total = d.lost_mass;
    const auto ps = balance_profile(s);
    for (const auto& [out, p] : d.probs) {
      total += p;
      ASSERT_EQ(is_valid(out), is_valid(s)) << s.str() << " -> " << out.str();
      const auto po = balance_profile(out);
      ASSERT_EQ(po.final_balance, ps.final_balance);
      ASSERT_EQ(po.min_prefix, ps.min_prefix);
      if (is_valid(s)) {
        const int gap = depth(out) - depth(s);
        ASSERT_TRUE(gap == 0 || gap == 1) << s.str() << " -> " << out.str();
      }
    }
    ASSERT_NEAR(total, 1.0, 1e-9) << s.str();
  }
}

TEST(Pfst, SampledOutputContainsInputAsSubsequence) {
  Rng rng(8);
  const auto t = pfst_fig_a1(0.8);
  const auto s = BracketString::parse("(()())()");
  for (int i = 0; i < 2000; ++i) {
    const auto out = apply_pfst(t, s, rng);
    std::size_t j = 0;
    for (std::size_t k = 0; k < out.size() && j < s.size(); ++k) j += out[k] == s[j];
    ASSERT_EQ(j, s.size());
  }
}

TEST(Pfst, SampledFrequenciesMatchExactDistribution) {
  const auto t = pfst_fig_a1(0.6);
  const auto s = BracketString::parse("(())");
  const auto exact = pfst_output_distribution(t, s);
  Rng rng(21);
  const int n = 100000;
  std::map<BracketString, int> counts;
  for (int i = 0; i < n; ++i) ++counts[apply_pfst(t, s, rng)];
  for (const auto& [out, p] : exact.probs) {
    const double sigma = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts[out] / static_cast<double>(n), p, 3 * sigma + 1e-12) << out.str();
  }
  for (const auto& [out, c] : counts) EXPECT_TRUE(exact.probs.count(out)) << out.str();
}

TEST(Pfst, EnumerationBound) {
  std::string long_input(30, '(');
  EXPECT_THROW(pfst_output_distribution(pfst_fig_a1(0.8), BracketString::parse(long_input)), Error);
}

TEST(Pfst, JsonRoundTrip) {
  const auto t = pfst_fig_a1(0.7);
  const auto back = pfst_from_json(pfst_to_json(t));
  EXPECT_EQ(back.states, t.states);
  ASSERT_EQ(back.rules.size(), t.rules.size());
  for (std::size_t i = 0; i < t.rules.size(); ++i) {
    EXPECT_EQ(back.rules[i].src, t.rules[i].src);
    EXPECT_EQ(back.rules[i].input, t.rules[i].input);
    EXPECT_EQ(back.rules[i].output, t.rules[i].output);
    EXPECT_DOUBLE_EQ(back.rules[i].prob, t.rules[i].prob);
  }
}

TEST(PushForward, ExhaustiveDyckPoolsOneToTwo) {
  std::vector<BracketString> p1, p2;
  for (const auto& s : all_strings(8)) {
    if (!is_valid(s) || s.empty()) continue;
    if (depth(s) <= 1) p1.push_back(s);
    if (depth(s) <= 2) p2.push_back(s);
  }
  const auto rep = check_eq1(pfst_fig_a1(0.8), pool_of(1, p1), pool_of(2, p2), 8);
  EXPECT_FALSE(rep.support_exceeded);
  EXPECT_GE(rep.total_variation, 0.0);
  EXPECT_LE(rep.total_variation, 1.0);
}

TEST(PushForward, IdentityCannotReachDeeperStrings) {
  const auto pools = pushforward_pools(pfst_fig_a1(0.8), 1, 2, 8);
  const auto rep = check_eq1(identity_pfst(), pools.at(1), pools.at(2), 8);
  EXPECT_FALSE(rep.support_covered);
  EXPECT_FALSE(rep.support_exceeded);
}

TEST(PushForward, PushforwardPoolsAreCovered) {
  const auto pools = pushforward_pools(pfst_fig_a1(0.8), 1, 2, 8);
  const auto rep = check_eq1(pfst_fig_a1(0.8), pools.at(1), pools.at(2), 8);
  EXPECT_TRUE(rep.support_covered);
  EXPECT_FALSE(rep.support_exceeded);
}

TEST(ConstGap, ReferenceBeatsRedundantVariant) {
  const auto pools = pushforward_pools(pfst_fig_a1(0.8), 1, 4, 8);
  const auto rep = check_const_gap({redundant_variant(0.8), pfst_fig_a1(0.8)}, 1, 4, pools, 8);
  EXPECT_EQ(rep.winner, 1U);
  EXPECT_EQ(rep.winner_complexity.total, 9);
  ASSERT_EQ(rep.passing.size(), 2U);
}

TEST(ConstGap, IdentityAlonePassesNothing) {
  const auto pools = pushforward_pools(pfst_fig_a1(0.8), 1, 3, 8);
  try {
    check_const_gap({identity_pfst()}, 1, 3, pools, 8);
    FAIL() << "expected NO_CANDIDATE_PASSES";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCandidatePasses);
  }
}

TEST(ConstGap, SinglePassingCandidate) {
  const auto pools = pushforward_pools(pfst_fig_a1(0.8), 1, 3, 8);
  const auto rep = check_const_gap({pfst_fig_a1(0.8)}, 1, 3, pools, 8);
  EXPECT_EQ(rep.winner, 0U);
}

TEST(NoSimpler, StrideTwoHasNoSimplerCandidate) {
  const auto winner = pfst_fig_a1(0.8);
  const auto pools = pushforward_pools(winner, 1, 3, 8);
  const auto cands = enumerate_pfsts(9);
  ASSERT_FALSE(cands.empty());
  const auto rep = check_no_simpler_subseq(winner, cands, {2}, 1, 3, pools, 8);
  EXPECT_TRUE(rep.holds());
  EXPECT_GT(rep.candidates_checked, 0U);
}

TEST(NoSimpler, EmptyCandidatesAndWinnerItself) {
  const auto winner = pfst_fig_a1(0.8);
  const auto pools = pushforward_pools(winner, 1, 3, 8);
  EXPECT_TRUE(check_no_simpler_subseq(winner, {}, {2}, 1, 3, pools, 8).holds());
  EXPECT_TRUE(check_no_simpler_subseq(winner, {winner}, {2}, 1, 3, pools, 8).holds());
}

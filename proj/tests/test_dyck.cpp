#include <filesystem>
#include <set>
#include <stack>

#include <gtest/gtest.h>

#include "dyind/dyck.hpp"
#include "dyind/error.hpp"

using namespace dyind;

namespace {

// Reference checker with an explicit stack.
bool stack_valid(const std::string& s) {
  std::stack<char> st;
  for (char c : s) {
    if (c == '(') {
      st.push(c);
    } else {
      if (st.empty()) return false;
      st.pop();
    }
  }
  return st.empty();
}

int stack_depth(const std::string& s) {
  int bal = 0, best = 0;
  for (char c : s) {
    bal += c == '(' ? 1 : -1;
    best = std::max(best, bal);
  }
  return best;
}

std::string bits_to_string(unsigned bits, int len) {
  std::string s;
  for (int i = 0; i < len; ++i) s.push_back((bits >> i) & 1U ? ')' : '(');
  return s;
}

}  // namespace

TEST(Dyck, ValidityMatchesStackOnAllShortStrings) {
  for (int len = 0; len <= 12; ++len) {
    for (unsigned bits = 0; bits < (1U << len); ++bits) {
      const std::string s = bits_to_string(bits, len);
      const auto b = BracketString::parse(s);
      ASSERT_EQ(is_valid(b), stack_valid(s)) << s;
      ASSERT_EQ(depth(b), stack_depth(s)) << s;
    }
  }
}

TEST(Dyck, ParseRejectsForeignCharacters) {
  EXPECT_THROW(BracketString::parse("(a)"), Error);
  EXPECT_NO_THROW(BracketString::parse(""));
}

TEST(Dyck, DepthExamples) {
  EXPECT_EQ(depth(BracketString::parse("(()())")), 2);
  EXPECT_EQ(depth(BracketString::parse("))")), 0);
  EXPECT_EQ(depth(BracketString::parse("")), 0);
  const auto p = balance_profile(BracketString::parse("())("));
  EXPECT_EQ(p.final_balance, 0);
  EXPECT_EQ(p.min_prefix, -1);
}

TEST(Dyck, GrammarRespectsDepthAndLength) {
  Rng rng(3);
  for (int m = 1; m <= 4; ++m) {
    GrammarConfig cfg;
    cfg.max_depth = m;
    for (int i = 0; i < 300; ++i) {
      const auto s = generate_valid(cfg, rng);
      ASSERT_TRUE(is_valid(s));
      ASSERT_LE(depth(s), m);
      ASSERT_LE(static_cast<int>(s.size()), cfg.max_length);
      ASSERT_GE(static_cast<int>(s.size()), cfg.min_length);
    }
  }
}

TEST(Dyck, DepthOneGrammarOutput) {
  GrammarConfig cfg;
  cfg.max_depth = 1;
  Rng rng(11);
  const auto s = generate_valid(cfg, rng);
  EXPECT_TRUE(is_valid(s));
  EXPECT_LE(depth(s), 1);
}

TEST(Dyck, ExactDepthSpine) {
  GrammarConfig cfg;
  cfg.max_depth = 6;
  cfg.max_length = 40;
  Rng rng(5);
  for (int d = 1; d <= 6; ++d) {
    const auto s = generate_exact_depth(cfg, d, rng);
    EXPECT_TRUE(is_valid(s));
    EXPECT_EQ(depth(s), d);
  }
}

TEST(Dyck, EveryCorruptionBreaksValidity) {
  Rng rng(9);
  GrammarConfig cfg;
  cfg.max_depth = 3;
  for (int i = 0; i < 200; ++i) {
    const auto s = generate_valid(cfg, rng);
    const auto y = generate_valid(cfg, rng);
    for (auto kind : {Corruption::kDelete, Corruption::kInsert, Corruption::kSubstitute, Corruption::kConcat}) {
      const auto c = corrupt_with(kind, s, rng, kind == Corruption::kConcat ? &y : nullptr);
      ASSERT_FALSE(is_valid(c)) << s.str() << " -> " << c.str();
    }
  }
}

TEST(Dyck, InsertionOfOpenOnPairGivesBalancePlusOne) {
  Rng rng(1);
  const auto out = corrupt_with(Corruption::kInsert, BracketString::parse("()"), rng);
  EXPECT_EQ(out.size(), 3U);
  EXPECT_FALSE(is_valid(out));
  EXPECT_EQ(std::abs(balance_profile(out).final_balance), 1);
}

TEST(Dyck, ConcatCorruptionShape) {
  Rng rng(2);
  const auto x = BracketString::parse("()");
  const auto y = BracketString::parse("()");
  const auto out = corrupt_with(Corruption::kConcat, x, rng, &y);
  // X ) Y' where Y' is Y with one inserted '('
  ASSERT_EQ(out.size(), 6U);
  EXPECT_EQ(out.str().substr(0, 3), "())");
  EXPECT_FALSE(is_valid(out));
  EXPECT_FALSE(is_valid(BracketString::parse("())(()")));
}

TEST(Dyck, EmptyInputCorruptions) {
  Rng rng(1);
  EXPECT_THROW(corrupt_with(Corruption::kDelete, BracketString{}, rng), Error);
  EXPECT_THROW(corrupt_with(Corruption::kSubstitute, BracketString{}, rng), Error);
}

TEST(Dyck, DatasetInvariants) {
  const auto ds = build_dataset(1, 1000, 42);
  EXPECT_EQ(ds.train.size(), 900U);
  EXPECT_EQ(ds.val.size(), 100U);
  int valid = 0;
  for (const auto& s : ds.all()) {
    EXPECT_EQ(s.label == Label::kValid, is_valid(s.sequence));
    if (s.label == Label::kValid) {
      ++valid;
      EXPECT_LE(s.depth, 1);
    }
  }
  EXPECT_NEAR(valid, 500, 1);
}

TEST(Dyck, TopLevelDepthIsRepresented) {
  const auto ds = build_dataset(4, 1000, 7);
  int top = 0, valid = 0;
  for (const auto& s : ds.all()) {
    if (s.label != Label::kValid) continue;
    ++valid;
    top += s.depth == 4;
  }
  EXPECT_GT(top, 0);
  EXPECT_GE(top * 10, valid);
}

TEST(Dyck, DatasetIsDeterministicPerSeed) {
  EXPECT_EQ(build_dataset(2, 300, 5), build_dataset(2, 300, 5));
  EXPECT_NE(build_dataset(2, 300, 5).train, build_dataset(2, 300, 6).train);
}

TEST(Dyck, LengthWindowOptions) {
  DatasetOptions o;
  o.min_length = 21;
  o.max_length = 40;
  const auto ds = build_dataset(2, 400, 3, o);
  for (const auto& s : ds.all()) {
    EXPECT_GE(s.length, 20) << s.sequence.str();
    EXPECT_LE(s.length, 41) << s.sequence.str();
    if (s.label == Label::kValid) {
      EXPECT_GE(s.length, 21);
      EXPECT_LE(s.length, 40);
      EXPECT_LE(s.depth, 2);
    }
  }
}

TEST(Dyck, WriteReadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "dyind_test_dyck_io";
  std::filesystem::remove_all(dir);
  const auto ds = build_dataset(3, 200, 17);
  write_dataset(ds, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "dyck1-3.train.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "dyck1-3.val.tsv"));
  EXPECT_EQ(read_dataset(dir, 3), ds);
  std::filesystem::remove_all(dir);
}

TEST(Dyck, EntropyOfUniformPool) {
  std::vector<BracketString> pool;
  for (const char* s : {"()", "(())", "()()", "((()))"}) pool.push_back(BracketString::parse(s));
  EXPECT_NEAR(plugin_entropy_bits(pool), 2.0, 1e-12);
  pool.push_back(pool[0]);
  pool.push_back(pool[0]);
  pool.push_back(pool[1]);
  pool.push_back(pool[1]);
  EXPECT_NEAR(plugin_entropy_bits(pool), -(2 * 0.375 * std::log2(0.375) + 2 * 0.125 * std::log2(0.125)), 1e-12);
}

TEST(Dyck, CumulativeEntropyNotBelowNonCumulative) {
  std::vector<Dataset> sets;
  for (int m = 1; m <= 3; ++m) sets.push_back(build_dataset(m, 2000, 100 + m));
  const auto rep = estimate_entropy(sets);
  ASSERT_EQ(rep.size(), 3U);
  EXPECT_NEAR(rep[0].cumulative_bits, rep[0].non_cumulative_bits, 1e-9);
  for (std::size_t i = 1; i < rep.size(); ++i) EXPECT_GT(rep[i].support_size, rep[i - 1].support_size);
}

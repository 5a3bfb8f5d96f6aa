#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "dyind/error.hpp"
#include "dyind/successor.hpp"

using namespace dyind;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kIo;
}

// Triples of an encoding as strings, order dropped.
std::multiset<std::string> triples(const std::vector<int>& toks) {
  std::multiset<std::string> out;
  for (std::size_t i = 1; i + 3 < toks.size() + 1 && i < toks.size(); i += 4) {
    out.insert(tokens_to_text({toks.begin() + static_cast<long>(i), toks.begin() + static_cast<long>(i + 4)}));
  }
  return out;
}

}  // namespace

TEST(Tokens, VocabularyLayout) {
  EXPECT_EQ(token_id("a"), 0);
  EXPECT_EQ(token_id("Z"), 51);
  EXPECT_EQ(token_id("("), tok::kOpen);
  EXPECT_EQ(token_id("<ns>"), tok::kNewState);
  EXPECT_EQ(token_id("<eos>"), tok::kEos);
  EXPECT_EQ(kModelVocab, 58U);
  EXPECT_EQ(code_of([] { token_id("<pad>"); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] { token_id("ab"); }), ErrorCode::kParseError);
  for (int t = 0; t < static_cast<int>(kModelVocab); ++t) EXPECT_EQ(token_id(token_text(t)), t);
}

TEST(Encode, DepthOneChain) {
  EXPECT_EQ(encode_fsa(counter_fsa(1), NamingMap::from_string("ac")).text(), "a # a ( c # c ) a");
}

TEST(Encode, DepthThreeChain) {
  EXPECT_EQ(encode_fsa(counter_fsa(3), NamingMap::from_string("pser")).text(),
            "p # p ( s # s ) p # s ( e # e ) s # e ( r # r ) e");
}

TEST(Encode, Preconditions) {
  Rng rng(1);
  EXPECT_EQ(code_of([&] { encode_fsa(counter_fsa(52), NamingMap::random(53, rng)); }), ErrorCode::kTooManyStates);
  auto f = counter_fsa(2);
  f.accepting[1] = true;
  EXPECT_EQ(code_of([&] { encode_fsa(f, NamingMap::from_string("abc")); }), ErrorCode::kNonstandardAccepting);
}

TEST(Encode, RandomNamingIsInjective) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto n = NamingMap::random(52, rng);
    std::set<int> seen(n.letter.begin(), n.letter.end());
    EXPECT_EQ(seen.size(), 52U);
    for (int t : n.letter) EXPECT_TRUE(is_letter(t));
  }
}

TEST(Decode, RoundTripAllChainSizes) {
  Rng rng(3);
  for (int m = 1; m <= 51; ++m) {
    const auto f = counter_fsa(m);
    for (int i = 0; i < 20; ++i) {
      const auto enc = encode_fsa(f, NamingMap::random(f.num_states(), rng), i % 2 == 1, rng);
      ASSERT_TRUE(fsa_isomorphic(minimize(decode_encoding(enc.tokens)), f)) << enc.text();
    }
  }
}

TEST(Decode, ErrorCases) {
  // "a # a ( a" is a complete self-loop triple; the truncated form is not.
  EXPECT_NO_THROW(decode_encoding(tokens_from_text("a # a ( a")));
  EXPECT_EQ(code_of([] { decode_encoding(tokens_from_text("a # a (")); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] { decode_encoding(tokens_from_text("a # a ( c #")); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] { decode_encoding(tokens_from_text("a # a ( b # a ( a")); }), ErrorCode::kDuplicateEdge);
  EXPECT_EQ(code_of([] { decode_encoding(tokens_from_text("a # a x b")); }), ErrorCode::kParseError);
  EXPECT_EQ(code_of([] { decode_encoding({}); }), ErrorCode::kParseError);
}

TEST(Decode, ShuffleInvariance) {
  Rng rng(4);
  const auto f = counter_fsa(6);
  const auto naming = NamingMap::random(f.num_states(), rng);
  const auto plain = encode_fsa(f, naming);
  const auto base = decode_encoding(plain.tokens);
  for (int i = 0; i < 20; ++i) {
    const auto sh = encode_fsa(f, naming, true, rng);
    EXPECT_EQ(sh.tokens.front(), plain.tokens.front());
    EXPECT_EQ(triples(sh.tokens), triples(plain.tokens));
    EXPECT_TRUE(fsa_isomorphic(minimize(decode_encoding(sh.tokens)), minimize(base)));
  }
}

TEST(Instance, ContinuationAndMask) {
  Rng rng(5);
  const auto inst = build_instance(counter_fsa(1), NamingMap::from_string("ac"), rng, false);
  EXPECT_EQ(inst.text(), "a # a ( c # c ) a <sep> # c ( <ns> # <ns> ) c <eos>");
  EXPECT_EQ(std::count(inst.loss_mask.begin(), inst.loss_mask.end(), true), 9);
  const auto deep = build_instance(counter_fsa(3), NamingMap::from_string("pser"), rng, false);
  EXPECT_EQ(deep.text(), "p # p ( s # s ) p # s ( e # e ) s # e ( r # r ) e <sep> # r ( <ns> # <ns> ) r <eos>");
}

TEST(Instance, DeepestStateNeedsChain) {
  EXPECT_EQ(deepest_state(counter_fsa(4)), 4);
  Fsa f;
  f.add_state("a", true);
  f.add_state("b");
  f.add_state("c");
  f.set_edge(0, Symbol::kOpen, 1);
  EXPECT_EQ(code_of([&] { deepest_state(f); }), ErrorCode::kNotAChain);
}

TEST(Instance, TrainingSetShape) {
  Rng rng(6);
  const auto set = build_training_set({1, 2, 3}, 3, false, rng);
  ASSERT_EQ(set.size(), 9U);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& inst = set[i];
    const auto sep = std::find(inst.tokens.begin(), inst.tokens.end(), tok::kSep);
    ASSERT_NE(sep, inst.tokens.end());
    const std::vector<int> prefix(inst.tokens.begin(), sep);
    const auto f = decode_encoding(prefix);
    EXPECT_TRUE(fsa_isomorphic(minimize(f), counter_fsa(static_cast<int>(i / 3) + 1)));
    std::set<int> letters;
    for (int t : prefix) {
      if (is_letter(t)) letters.insert(t);
    }
    EXPECT_EQ(letters.size(), f.num_states());
    EXPECT_EQ(std::count(inst.loss_mask.begin(), inst.loss_mask.end(), true), 9);
    EXPECT_EQ(inst.tokens.size() - static_cast<std::size_t>(sep - inst.tokens.begin()) - 1, 9U);
  }
  Rng a(7), b(7);
  EXPECT_EQ(build_training_set({1, 2}, 4, true, a)[5].tokens, build_training_set({1, 2}, 4, true, b)[5].tokens);
  EXPECT_TRUE(build_training_set({1, 2, 3}, 0, false, rng).empty());
}

TEST(Instance, FileRoundTrip) {
  Rng rng(8);
  const auto set = build_training_set({1, 2, 3}, 5, true, rng);
  const auto path = std::filesystem::temp_directory_path() / "dyind_test_instances.txt";
  write_instances(set, path);
  const auto back = read_instances(path);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back[i].tokens, set[i].tokens);
    EXPECT_EQ(back[i].loss_mask, set[i].loss_mask);
  }
  std::filesystem::remove(path);
  EXPECT_EQ(code_of([] { instance_from_tokens(tokens_from_text("a # a ( b # b ) a")); }), ErrorCode::kParseError);
}

TEST(Apply, UntrainedModelIsMalformed) {
  Rng rng(9);
  const auto lm = RnnParams::init(Task::kLanguageModel, kInputVocab, 8, 16, kModelVocab, false, rng);
  int malformed = 0;
  for (int i = 0; i < 5; ++i) {
    try {
      apply_ind(lm, counter_fsa(4), rng);
    } catch (const Error& e) {
      malformed += e.code() == ErrorCode::kMalformedGeneration || e.code() == ErrorCode::kStaleState;
    }
  }
  EXPECT_EQ(malformed, 5);
}

TEST(Apply, TooManyStates) {
  Rng rng(10);
  const auto lm = RnnParams::init(Task::kLanguageModel, kInputVocab, 8, 16, kModelVocab, false, rng);
  EXPECT_EQ(code_of([&] { apply_ind(lm, counter_fsa(52), rng); }), ErrorCode::kNameExhausted);
}

TEST(Apply, IterationIndexInErrors) {
  Rng rng(11);
  const auto lm = RnnParams::init(Task::kLanguageModel, kInputVocab, 8, 16, kModelVocab, false, rng);
  try {
    apply_ind_iter(lm, counter_fsa(3), 3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(e.detail().find("iteration 1"), std::string::npos) << e.detail();
  }
}

#include <benchmark/benchmark.h>

#include "dyind/extract.hpp"
#include "dyind/fsa.hpp"
#include "dyind/successor.hpp"
#include "dyind/train.hpp"

using namespace dyind;

namespace {

std::vector<LmExample> lm_batch(int n) {
  Rng rng(1);
  std::vector<LmExample> out;
  for (const auto& inst : build_training_set({1, 2, 3}, n / 3 + 1, false, rng)) out.push_back(inst.example());
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void BM_LmBackward(benchmark::State& state) {
  Rng rng(2);
  const auto p = RnnParams::init(Task::kLanguageModel, kInputVocab, 16, static_cast<std::size_t>(state.range(0)),
                                 kModelVocab, false, rng);
  const auto batch = lm_batch(32);
  for (auto _ : state) benchmark::DoNotOptimize(lm_backward(p, batch).loss);
}
BENCHMARK(BM_LmBackward)->Arg(16)->Arg(64)->Arg(128);

void BM_ClassifierBackward(benchmark::State& state) {
  const auto ds = build_dataset(3, 200, 1);
  std::vector<ClassifierExample> batch;
  for (std::size_t i = 0; i < 32; ++i) {
    batch.push_back({bracket_tokens(ds.train[i].sequence), ds.train[i].label == Label::kValid ? 1 : 0});
  }
  Rng rng(3);
  const auto p = RnnParams::init(Task::kClassifier, 2, 2, 16, 2, true, rng);
  for (auto _ : state) benchmark::DoNotOptimize(classifier_backward(p, batch).loss);
}
BENCHMARK(BM_ClassifierBackward);

void BM_Minimize(benchmark::State& state) {
  const auto f = counter_fsa(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(minimize(f).num_states());
}
BENCHMARK(BM_Minimize)->Arg(4)->Arg(52);

void BM_ExtractAnalytic(benchmark::State& state) {
  const auto p = rnn_from_fsa(counter_fsa(3));
  ExtractionConfig cfg;
  cfg.level = 3;
  cfg.probe_samples = 2000;
  cfg.cluster_max = 10;
  cfg.restarts = 5;
  for (auto _ : state) benchmark::DoNotOptimize(extract_fsa(p, cfg).fidelity);
}
BENCHMARK(BM_ExtractAnalytic)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  Rng rng(4);
  const auto p = RnnParams::init(Task::kLanguageModel, kInputVocab, 16, 128, kModelVocab, false, rng);
  auto prefix = encode_fsa(counter_fsa(static_cast<int>(state.range(0))),
                           NamingMap::random(static_cast<std::size_t>(state.range(0) + 1), rng))
                    .tokens;
  prefix.push_back(tok::kSep);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(p, prefix, tok::kEos, 9).size());
}
BENCHMARK(BM_GreedyDecode)->Arg(4)->Arg(51);

}  // namespace

BENCHMARK_MAIN();

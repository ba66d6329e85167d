#include <benchmark/benchmark.h>

#include "protostream/evaluation.hpp"
#include "protostream/rng.hpp"
#include "protostream/sampler.hpp"

using namespace protostream;

namespace {

void BM_GenerateSequence(benchmark::State& state) {
  SamplerConfig cfg;
  cfg.sequence_length = static_cast<int>(state.range(0));
  cfg.environments = 5;
  uint64_t index = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_sequence(cfg, 7, "bench", index++));
  }
}
BENCHMARK(BM_GenerateSequence)->Arg(40)->Arg(150);

void BM_AveragePrecision(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RngStream rng(5);
  std::vector<PredictionRecord> records;
  records.reserve(n);
  for (int i = 0; i < n; ++i) {
    PredictionRecord r;
    r.sequence_id = i / 150;
    r.t = i % 150;
    r.known_score = rng.uniform();
    r.novel = rng.bernoulli(0.3);
    r.true_class = static_cast<int>(rng.uniform_int(40));
    r.predicted_class =
        rng.bernoulli(0.7) ? r.true_class : static_cast<int>(rng.uniform_int(40));
    records.push_back(r);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(average_precision(records));
  }
}
BENCHMARK(BM_AveragePrecision)->Arg(10000)->Arg(100000);

}  // namespace

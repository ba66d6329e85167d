#include <benchmark/benchmark.h>

#include "protostream/learners.hpp"
#include "protostream/rng.hpp"
#include "protostream/tape.hpp"
#include "protostream/training.hpp"

using namespace protostream;

namespace {

void BM_MatVec(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  RngStream rng(1);
  Tensor w = uniform_init({n, n}, n, rng);
  Tensor x = uniform_init({n}, n, rng);
  for (auto _ : state) {
    Tape tape;
    const auto wi = tape.constant(w);
    const auto xi = tape.constant(x);
    benchmark::DoNotOptimize(tape.matvec(wi, xi));
  }
}
BENCHMARK(BM_MatVec)->Arg(32)->Arg(64)->Arg(256);

void BM_LstmStepForward(benchmark::State& state) {
  const int hidden = static_cast<int>(state.range(0));
  ParameterStore store;
  RngStream rng(2);
  add_lstm_params(store, "lstm", LstmSpec{hidden, hidden}, rng);
  Tensor x = uniform_init({hidden}, hidden, rng);
  for (auto _ : state) {
    Tape tape;
    auto staged = store.stage(tape);
    LstmState s = lstm_zero_state(tape, hidden);
    s = lstm_step(tape, staged, "lstm", tape.constant(x), s);
    benchmark::DoNotOptimize(s.h);
  }
}
BENCHMARK(BM_LstmStepForward)->Arg(32)->Arg(64)->Arg(128);

void BM_RolloutForwardBackward(benchmark::State& state) {
  SamplerConfig sampler;
  sampler.sequence_length = static_cast<int>(state.range(0));
  sampler.environments = 3;
  sampler.feature_dim = 16;
  sampler.context_cue_dim = 8;
  LearnerConfig lcfg;
  lcfg.name = "cpm";
  lcfg.input_dim = sampler.input_dim();
  lcfg.embedding_dim = 24;
  lcfg.encoder_hidden = {24};
  lcfg.lstm_hidden = 32;
  lcfg.max_slots = 58;
  auto learner = make_learner(lcfg, 3);
  const Sequence seq = generate_sequence(sampler, 3, "bench", 0);
  for (auto _ : state) {
    Tape tape;
    RolloutOptions opts;
    const RolloutOutput out = rollout_sequence(tape, *learner, seq, opts);
    tape.backward(out.loss.node);
    benchmark::DoNotOptimize(tape.grad(0));
  }
}
BENCHMARK(BM_RolloutForwardBackward)->Arg(20)->Arg(40)->Arg(150);

}  // namespace

BENCHMARK_MAIN();

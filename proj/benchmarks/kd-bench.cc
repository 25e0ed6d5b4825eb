// benchmarks/kd-bench.cc

// Copyright 2026  The tdkd Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Throughput of the lattice losses, distillation losses and decoders.

#include <random>

#include <benchmark/benchmark.h>

#include "tdkd/decoding.h"
#include "tdkd/kd-losses.h"
#include "tdkd/nnet.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {
namespace {

OutputLattice MakeLattice(int32_t T, int32_t U, int32_t K, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.5);
  std::vector<double> logits(static_cast<size_t>(T) * (U + 1) * K);
  for (double &x : logits) x = normal(rng);
  return OutputLattice::FromLogits(T, U, K, logits);
}

TokenSeq MakeTokens(int32_t U, int32_t K) {
  TokenSeq y(U);
  for (int32_t u = 0; u < U; ++u) y[u] = 1 + u % (K - 1);
  return y;
}

void SetShape(benchmark::State &state, int32_t T, int32_t U, int32_t K) {
  state.counters["nodes"] = static_cast<double>(T) * (U + 1);
  state.counters["K"] = K;
}

void BM_TransducerNll(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice z = MakeLattice(T, U, K, 1);
  TokenSeq y = MakeTokens(U, K);
  for (auto _ : state) {
    TransducerLoss loss = TransducerNll(z, y);
    benchmark::DoNotOptimize(TransducerNllGrad(z, y, loss.table));
  }
  SetShape(state, T, U, K);
}

void BM_Viterbi(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice z = MakeLattice(T, U, K, 2);
  TokenSeq y = MakeTokens(U, K);
  for (auto _ : state) benchmark::DoNotOptimize(ViterbiAlignment(z, y));
  SetShape(state, T, U, K);
}

void BM_KdFullLattice(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice teacher = MakeLattice(T, U, K, 3), student = MakeLattice(T, U, K, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(KdFullLattice(teacher, student));
    benchmark::DoNotOptimize(KdFullLatticeGrad(teacher, student));
  }
  SetShape(state, T, U, K);
}

void BM_KdCollapsed(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice student = MakeLattice(T, U, K, 4);
  TokenSeq y = MakeTokens(U, K);
  CollapsedTargetLattice target = CollapseLattice(MakeLattice(T, U, K, 3), y);
  for (auto _ : state) {
    benchmark::DoNotOptimize(KdCollapsed(target, student, y));
    benchmark::DoNotOptimize(KdCollapsedGrad(target, student, y));
  }
  SetShape(state, T, U, K);
}

void BM_KdOneBest(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice student = MakeLattice(T, U, K, 4);
  KdTargetSet target = MakeOneBestTargets("b", MakeLattice(T, U, K, 3), MakeTokens(U, K));
  for (auto _ : state) {
    benchmark::DoNotOptimize(KdOneBest(target, student, 0));
    benchmark::DoNotOptimize(KdOneBestGrad(target, student, 0));
  }
  SetShape(state, T, U, K);
}

void BM_BeamDecode(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1), K = state.range(2);
  OutputLattice z = MakeLattice(T, U, K, 5);
  BeamOptions o;
  o.beam = 4;
  for (auto _ : state) benchmark::DoNotOptimize(BeamDecode(LatticeScorer(z), o));
  SetShape(state, T, U, K);
}

void BM_ModelForwardBackward(benchmark::State &state) {
  const int32_t T = state.range(0), U = state.range(1);
  ModelConfig c;
  TransducerModel model(c, 1);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  FeatureMatrix x(T, c.input_dim);
  for (int32_t i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  TokenSeq y = MakeTokens(U, c.vocab_size);
  std::vector<double> grad(model.NumParams());
  for (auto _ : state) {
    ForwardTape tape;
    OutputLattice z = ForwardLattice(model, x, y, &tape);
    TransducerLoss loss = TransducerNll(z, y);
    Backward(model, tape, TransducerNllGrad(z, y, loss.table), grad);
    benchmark::DoNotOptimize(grad.data());
  }
  SetShape(state, T, U, c.vocab_size);
}

void Shapes(benchmark::internal::Benchmark *b) {
  for (int t : {25, 50, 100, 200}) b->Args({t, t / 5, 64});
}

BENCHMARK(BM_TransducerNll)->Apply(Shapes);
BENCHMARK(BM_Viterbi)->Apply(Shapes);
BENCHMARK(BM_KdFullLattice)->Apply(Shapes);
BENCHMARK(BM_KdCollapsed)->Apply(Shapes);
BENCHMARK(BM_KdOneBest)->Apply(Shapes);
BENCHMARK(BM_BeamDecode)->Args({50, 0, 12})->Args({200, 0, 12});
BENCHMARK(BM_ModelForwardBackward)->Args({24, 6})->Args({48, 12});

}  // namespace
}  // namespace tdkd

BENCHMARK_MAIN();

// tests/unit/decoding-test.cc

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

#include "tdkd/decoding.h"

#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.h"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"
#include "tdkd/ngram-lm.h"

namespace tdkd {
namespace {

ModelConfig TinyConfig() {
  ModelConfig c;
  c.vocab_size = 3;
  c.input_dim = 2;
  c.encoder_hidden = 3;
  c.pred_embed = 2;
  c.pred_hidden = 3;
  c.joint_hidden = 4;
  return c;
}

FeatureMatrix RandomFeatures(int32_t T, int32_t d, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix x(T, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

// Scales every parameter so that output distributions are peaky enough to
// make the decoders' choices non-trivial.
TransducerModel SharpModel(const ModelConfig &c, uint64_t seed, double gain) {
  TransducerModel m(c, seed);
  for (double &p : m.MutableParams()) p *= gain;
  return m;
}

TEST(GreedyDecode, BlankDominantLatticeIsEmpty) {
  const int32_t T = 4, U = 0, K = 3;
  std::vector<double> logits(T * (U + 1) * K, 0.0);
  for (int t = 0; t < T; ++t) logits[t * K] = 5.0;
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  Hypothesis h = GreedyDecode(LatticeScorer(lat));
  EXPECT_TRUE(h.tokens.empty());
  EXPECT_NEAR(h.score, 4 * lat.Node(0, 0)[0], 1e-12);
}

TEST(GreedyDecode, ConstructedLatticeEmitsAtFrame) {
  // Token 2 is near-certain at (t=1, u=0); blank elsewhere.
  const int32_t T = 3, U = 1, K = 3;
  std::vector<double> logits(T * (U + 1) * K, 0.0);
  for (int node = 0; node < T * (U + 1); ++node) logits[node * K] = 20.0;
  logits[(1 * (U + 1) + 0) * K + 0] = 0.0;
  logits[(1 * (U + 1) + 0) * K + 2] = 40.0;
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  Hypothesis h = GreedyDecode(LatticeScorer(lat));
  EXPECT_EQ(h.tokens, TokenSeq{2});
  EXPECT_EQ(h.emission_frames, std::vector<int32_t>{1});
  EXPECT_EQ(GreedyDecode(LatticeScorer(lat)).score, h.score);
}

TEST(GreedyDecode, CapForcesBlank) {
  // Label 1 always wins; with a cap of 2 each frame emits exactly two.
  const int32_t T = 2, U = 8, K = 3;
  std::vector<double> logits(T * (U + 1) * K, 0.0);
  for (int node = 0; node < T * (U + 1); ++node) logits[node * K + 1] = 3.0;
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  Hypothesis h = GreedyDecode(LatticeScorer(lat), 2);
  EXPECT_EQ(h.tokens, (TokenSeq{1, 1, 1, 1}));
  EXPECT_EQ(h.emission_frames, (std::vector<int32_t>{0, 0, 1, 1}));
  double want = 4 * lat.Node(0, 0)[1] + 2 * lat.Node(0, 0)[0];
  EXPECT_NEAR(h.score, want, 1e-12);
}

TEST(BeamDecode, BeamOneEqualsGreedy) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    ModelConfig c = TinyConfig();
    c.vocab_size = 3 + trial % 4;
    TransducerModel m = SharpModel(c, trial, 3.0);
    FeatureMatrix x = RandomFeatures(3 + trial % 6, 2, rng);
    ModelScorer scorer(m, x);
    Hypothesis g = GreedyDecode(scorer);
    BeamOptions o;
    o.beam = 1;
    auto b = BeamDecode(scorer, o);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0].tokens, g.tokens);
    EXPECT_EQ(b[0].emission_frames, g.emission_frames);
    EXPECT_EQ(b[0].score, g.score);
  }
}

// Probability of each label sequence, summed over every alignment that
// emits at most `cap` labels per frame, using lattice node values only.
std::map<TokenSeq, double> ExhaustiveSequenceScores(const TransducerModel &m,
                                                    const FeatureMatrix &x, int32_t cap) {
  const int32_t T = static_cast<int32_t>(x.rows());
  const int32_t K = m.Config().vocab_size;
  std::map<TokenSeq, double> out;
  std::vector<TokenSeq> seqs{{}};
  for (size_t i = 0; i < seqs.size(); ++i) {
    if (static_cast<int32_t>(seqs[i].size()) == T * cap) continue;
    for (int32_t k = 1; k < K; ++k) {
      TokenSeq next = seqs[i];
      next.push_back(k);
      seqs.push_back(next);
    }
  }
  for (const TokenSeq &z : seqs) {
    OutputLattice lat = ForwardLattice(m, x, z);
    std::vector<Alignment> all;
    testing::EnumerateAlignments(T, z, &all);
    double total = kLogZero;
    for (const Alignment &a : all) {
      std::vector<int32_t> per_frame(T, 0);
      for (const auto &s : a.steps)
        if (s.k != kBlankId) ++per_frame[s.t];
      if (*std::max_element(per_frame.begin(), per_frame.end()) > cap) continue;
      total = LogAdd(total, testing::PathScore(lat, a));
    }
    out[z] = total;
  }
  return out;
}

TEST(BeamDecode, WideBeamMatchesExhaustiveSearch) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    TransducerModel m = SharpModel(TinyConfig(), 50 + trial, 2.5);
    FeatureMatrix x = RandomFeatures(2 + trial % 2, 2, rng);
    const int32_t cap = 2;
    auto scores = ExhaustiveSequenceScores(m, x, cap);
    auto best = std::max_element(scores.begin(), scores.end(), [](auto &a, auto &b) {
      return a.second < b.second;
    });
    BeamOptions o;
    o.beam = 100000;
    o.max_symbols_per_frame = cap;
    auto hyps = BeamDecode(ModelScorer(m, x), o);
    ASSERT_FALSE(hyps.empty());
    EXPECT_EQ(hyps[0].tokens, best->first);
    EXPECT_NEAR(hyps[0].score, best->second, 1e-9);
    EXPECT_EQ(hyps.size(), std::min<size_t>(scores.size(), o.beam));
    for (const Hypothesis &h : hyps) EXPECT_NEAR(h.score, scores.at(h.tokens), 1e-9);
  }
}

TEST(BeamDecode, ZeroLmWeightIgnoresLm) {
  std::mt19937_64 rng(4);
  ModelConfig c = TinyConfig();
  c.vocab_size = 5;
  std::vector<TokenSeq> corpus{{1, 2, 3}, {4, 4, 1}};
  NgramLm lm = NgramLm::Train(corpus, 2, 1.0, 5);
  TransducerModel m = SharpModel(c, 7, 2.0);
  FeatureMatrix x = RandomFeatures(6, 2, rng);
  BeamOptions plain, fused;
  fused.lm = &lm;
  fused.lm_weight = 0.0;
  auto a = BeamDecode(ModelScorer(m, x), plain);
  auto b = BeamDecode(ModelScorer(m, x), fused);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  BeamOptions zero;
  zero.beam = 0;
  EXPECT_THROW(BeamDecode(ModelScorer(m, x), zero), ContractViolation);
}

TEST(BeamDecode, LmWeightShiftsHypotheses) {
  // A flat acoustic model leaves the choice to the LM, which only ever saw
  // label 3.
  const int32_t T = 3, U = 9, K = 4;
  std::vector<double> logits(T * (U + 1) * K, 0.0);
  for (int node = 0; node < T * (U + 1); ++node) logits[node * K] = 0.5;
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  std::vector<TokenSeq> corpus(20, TokenSeq{3, 3});
  NgramLm lm = NgramLm::Train(corpus, 2, 0.1, K);
  BeamOptions o;
  o.lm = &lm;
  o.lm_weight = 1.0;
  auto hyps = BeamDecode(LatticeScorer(lat), o);
  ASSERT_FALSE(hyps.empty());
  for (int32_t k : hyps[0].tokens) EXPECT_EQ(k, 3);
}

// On a one-frame lattice every hypothesis score can be written down: each
// symbol is scored by the renormalised fused distribution, with the blank
// entry's LM score 0 for blank and the smallest label score for labels.
TEST(BeamDecode, FusedScoresFollowBlankRule) {
  const int32_t T = 1, U = 1, K = 3;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> logits(T * (U + 1) * K);
  for (double &v : logits) v = normal(rng);
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  std::vector<TokenSeq> corpus{{1, 2}, {2, 2}, {2}};
  NgramLm lm = NgramLm::Train(corpus, 2, 0.5, K);
  const double beta = 0.7;
  LatticeScorer scorer(lat);

  auto fused = [&](const std::vector<double> &state, const TokenSeq &history,
                   int32_t symbol) {
    std::vector<double> lp(K);
    scorer.FrameLogProbs(0, state, lp);
    std::vector<double> dist = lm.StepDist(history);
    double labels = kLogZero, min_label = std::min(dist[1], dist[2]);
    for (int32_t k = 1; k < K; ++k) labels = LogAdd(labels, lp[k] + beta * dist[k]);
    if (symbol == kBlankId) return lp[kBlankId] - LogAdd(lp[kBlankId], labels);
    return lp[symbol] + beta * dist[symbol] -
           LogAdd(lp[kBlankId] + beta * min_label, labels);
  };

  BeamOptions o;
  o.beam = 8;
  o.lm = &lm;
  o.lm_weight = beta;
  auto hyps = BeamDecode(scorer, o);
  std::map<TokenSeq, double> expected;
  std::vector<double> start = scorer.InitialState();
  expected[{}] = fused(start, {}, kBlankId);
  for (int32_t k = 1; k < K; ++k) {
    std::vector<double> one = scorer.NextState(start, k);
    double prefix = fused(start, {}, k);
    expected[{k}] = prefix + fused(one, {k}, kBlankId);
    // Past the last label only blank remains, with probability one.
    for (int32_t j = 1; j < K; ++j) expected[{k, j}] = prefix + fused(one, {k}, j);
  }
  ASSERT_EQ(hyps.size(), expected.size());
  for (const Hypothesis &h : hyps) {
    ASSERT_TRUE(expected.count(h.tokens));
    EXPECT_NEAR(h.score, expected[h.tokens], 1e-12);
  }
}

TEST(Wer, Examples) {
  std::vector<std::string> ref{"a", "b", "c"}, hyp{"a", "x", "c", "d"};
  WerReport r = ComputeWer(ref, hyp);
  EXPECT_EQ(r.substitutions, 1);
  EXPECT_EQ(r.insertions, 1);
  EXPECT_EQ(r.deletions, 0);
  EXPECT_NEAR(r.wer, 2.0 / 3.0, 1e-15);
  WerReport same = ComputeWer(ref, ref);
  EXPECT_EQ(same.wer, 0.0);
  WerReport swapped = ComputeWer(hyp, ref);
  EXPECT_EQ(swapped.Errors(), r.Errors());
  EXPECT_NEAR(swapped.wer, 2.0 / 4.0, 1e-15);
}

TEST(Wer, EmptyReference) {
  std::vector<std::string> empty, hyp{"a"};
  WerReport none = ComputeWer(empty, empty);
  EXPECT_EQ(none.wer, 0.0);
  EXPECT_FALSE(none.infinite);
  WerReport inf = ComputeWer(empty, hyp);
  EXPECT_TRUE(inf.infinite);
  EXPECT_EQ(inf.insertions, 1);
}

TEST(Wer, TieBreakPrefersSubstitution) {
  // "a b" vs "b c": either S+S or D+I costs 2; substitutions are preferred.
  std::vector<int32_t> ref{1, 2}, hyp{2, 3};
  WerReport r = ComputeWer(ref, hyp);
  EXPECT_EQ(r.substitutions, 2);
  EXPECT_EQ(r.insertions + r.deletions, 0);
}

TEST(Wer, RandomBoundsAndAccumulation) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int32_t> len(0, 7), tok(1, 4);
  WerReport total;
  int64_t errors = 0, words = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int32_t> ref(len(rng)), hyp(len(rng));
    for (auto &k : ref) k = tok(rng);
    for (auto &k : hyp) k = tok(rng);
    WerReport r = ComputeWer(ref, hyp);
    EXPECT_LE(r.Errors(), static_cast<int64_t>(ref.size() + hyp.size()));
    EXPECT_GE(r.Errors(), std::abs(static_cast<int64_t>(ref.size()) -
                                   static_cast<int64_t>(hyp.size())));
    EXPECT_EQ(r.deletions - r.insertions,
              static_cast<int64_t>(ref.size()) - static_cast<int64_t>(hyp.size()));
    EXPECT_EQ(ComputeWer(ref, ref).Errors(), 0);
    total += r;
    errors += r.Errors();
    words += static_cast<int64_t>(ref.size());
  }
  EXPECT_NEAR(total.wer, static_cast<double>(errors) / words, 1e-15);
}

TEST(EmissionLag, Examples) {
  Hypothesis a{{1, 2, 3}, 0.0, {1, 4, 6}};
  EXPECT_EQ(EmissionLag(a, a), 0.0);
  Hypothesis b = a;
  for (auto &f : b.emission_frames) f += 3;
  EXPECT_EQ(EmissionLag(b, a), 3.0);
  Hypothesis c{{1, 2}, 0.0, {1, 2}};
  EXPECT_THROW(EmissionLag(a, c), ContractViolation);
}

TEST(HypothesisJson, RoundTrip) {
  Hypothesis h{{3, 1, 4}, -2.75, {0, 2, 2}};
  std::string line = HypothesisToJsonLine("dev-0001", h);
  EXPECT_NE(line.find("\"text\":\"w3 w1 w4\""), std::string::npos);
  auto [id, back] = HypothesisFromJsonLine(line);
  EXPECT_EQ(id, "dev-0001");
  EXPECT_EQ(back.tokens, h.tokens);
  EXPECT_EQ(back.score, h.score);
  EXPECT_EQ(back.emission_frames, h.emission_frames);
  EXPECT_THROW(HypothesisFromJsonLine("{\"id\":1}"), FormatError);
}

}  // namespace
}  // namespace tdkd

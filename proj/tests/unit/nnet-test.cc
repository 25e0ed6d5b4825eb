// tests/unit/nnet-test.cc

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

#include "tdkd/nnet.h"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.h"
#include "tdkd/errors.h"
#include "tdkd/kd-losses.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {
namespace {

ModelConfig SmallConfig(bool streaming) {
  ModelConfig c;
  c.vocab_size = 5;
  c.input_dim = 3;
  c.encoder_hidden = 4;
  c.encoder_layers = 2;
  c.streaming = streaming;
  c.lookahead = streaming ? 0 : 1;
  c.pred_embed = 3;
  c.pred_hidden = 4;
  c.joint_hidden = 5;
  return c;
}

FeatureMatrix RandomFeatures(int32_t T, int32_t d, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureMatrix x(T, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  return x;
}

TEST(ForwardLattice, ZeroModelIsUniform) {
  TransducerModel m(SmallConfig(false));
  std::mt19937_64 rng(1);
  FeatureMatrix x = RandomFeatures(4, 3, rng);
  OutputLattice lat = ForwardLattice(m, x, TokenSeq{1, 2});
  EXPECT_EQ(lat.NumFrames(), 4);
  EXPECT_EQ(lat.NumLabels(), 2);
  EXPECT_EQ(lat.VocabSize(), 5);
  for (double v : lat.Data()) EXPECT_DOUBLE_EQ(v, -std::log(5.0));
}

TEST(ForwardLattice, ShapeAndDeterminism) {
  TransducerModel m(SmallConfig(false), 3);
  std::mt19937_64 rng(2);
  for (int32_t T : {1, 3, 7}) {
    FeatureMatrix x = RandomFeatures(T, 3, rng);
    TokenSeq y = testing::RandomTokens(T % 4, 5, rng);
    OutputLattice a = ForwardLattice(m, x, y), b = ForwardLattice(m, x, y);
    EXPECT_EQ(a.NumFrames(), T);
    EXPECT_EQ(a.NumLabels(), static_cast<int32_t>(y.size()));
    EXPECT_TRUE(ValidateLattice(a).ok);
    EXPECT_TRUE(std::equal(a.Data().begin(), a.Data().end(), b.Data().begin()));
  }
  FeatureMatrix wrong = RandomFeatures(3, 4, rng);
  EXPECT_THROW(ForwardLattice(m, wrong, TokenSeq{}), ContractViolation);
}

TEST(ForwardLattice, StreamingIsCausal) {
  TransducerModel m(SmallConfig(true), 4);
  std::mt19937_64 rng(3);
  const int32_t T = 8;
  FeatureMatrix x = RandomFeatures(T, 3, rng);
  TokenSeq y{2, 3};
  OutputLattice base = ForwardLattice(m, x, y);
  Eigen::MatrixXd f = EncodeFeatures(m, x);
  std::uniform_int_distribution<int32_t> pick(1, T - 1);
  for (int probe = 0; probe < 10; ++probe) {
    int32_t later = pick(rng);
    FeatureMatrix moved = x;
    moved.row(later).array() += 0.5;
    OutputLattice lat = ForwardLattice(m, moved, y);
    Eigen::MatrixXd g = EncodeFeatures(m, moved);
    for (int32_t t = 0; t < later; ++t) {
      EXPECT_EQ((g.col(t) - f.col(t)).norm(), 0.0);
      auto a = base.Frame(t), b = lat.Frame(t);
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    }
    EXPECT_GT((g.col(later) - f.col(later)).norm(), 0.0);
  }
}

TEST(ForwardLattice, NonStreamingSeesTheFuture) {
  TransducerModel m(SmallConfig(false), 4);
  std::mt19937_64 rng(4);
  FeatureMatrix x = RandomFeatures(6, 3, rng);
  Eigen::MatrixXd f = EncodeFeatures(m, x);
  FeatureMatrix moved = x;
  moved.row(5).array() += 0.5;
  EXPECT_GT((EncodeFeatures(m, moved).col(0) - f.col(0)).norm(), 0.0);
}

TEST(ModelConfig, Validation) {
  ModelConfig c = SmallConfig(true);
  c.lookahead = 2;
  EXPECT_THROW(c.Check(), ConfigError);
  c = SmallConfig(false);
  EXPECT_EQ(ModelConfig::FromJson(c.ToJson()), c);
  c.vocab_size = 1;
  EXPECT_THROW(c.Check(), ConfigError);
}

TEST(TransducerModel, InitRange) {
  TransducerModel m(SmallConfig(false), 9);
  for (const ParamBlock &b : m.Blocks()) {
    double bound = b.name == "pred.embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (size_t i = 0; i < b.Size(); ++i) {
      double v = m.Params()[b.offset + i];
      if (b.name.ends_with("bias")) {
        EXPECT_EQ(v, 0.0) << b.name;
      } else {
        EXPECT_LE(std::abs(v), bound) << b.name;
      }
    }
  }
  TransducerModel again(SmallConfig(false), 9);
  EXPECT_TRUE(std::equal(m.Params().begin(), m.Params().end(), again.Params().begin()));
}

double Objective(const TransducerModel &m, const FeatureMatrix &x, const TokenSeq &y,
                 const KdTargetSet &target, int32_t tau) {
  OutputLattice lat = ForwardLattice(m, x, y);
  return CombinedLoss(TransducerNll(lat, y).loss, KdOneBest(target, lat, tau), 0.1);
}

void CheckParameterGradient(bool streaming, uint64_t seed) {
  std::mt19937_64 rng(seed);
  TransducerModel m(SmallConfig(streaming), seed);
  TransducerModel teacher(SmallConfig(false), seed + 100);
  FeatureMatrix x = RandomFeatures(5, 3, rng);
  TokenSeq y = testing::RandomTokens(2, 5, rng);
  KdTargetSet target = MakeOneBestTargets("x", ForwardLattice(teacher, x, y), y);
  const int32_t tau = streaming ? 2 : 0;

  ForwardTape tape;
  OutputLattice lat = ForwardLattice(m, x, y, &tape);
  LatticeGradient lg = TransducerNllGrad(lat, y);
  LatticeGradient kg = KdOneBestGrad(target, lat, tau);
  for (size_t i = 0; i < lg.Data().size(); ++i) lg.Data()[i] += 0.1 * kg.Data()[i];
  std::vector<double> grad(m.NumParams(), 0.0);
  Backward(m, tape, lg, grad);

  std::uniform_int_distribution<size_t> pick(0, m.NumParams() - 1);
  const double h = 1e-5;
  double worst = 0.0;
  for (int probe = 0; probe < 50; ++probe) {
    size_t i = pick(rng);
    TransducerModel p = m;
    double keep = p.Params()[i];
    p.MutableParams()[i] = keep + h;
    double up = Objective(p, x, y, target, tau);
    p.MutableParams()[i] = keep - h;
    double down = Objective(p, x, y, target, tau);
    double fd = (up - down) / (2 * h);
    double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-4});
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(Backward, FiniteDifferencesNonStreaming) { CheckParameterGradient(false, 21); }
TEST(Backward, FiniteDifferencesStreaming) { CheckParameterGradient(true, 22); }

TEST(Backward, ZeroAndAdditive) {
  TransducerModel m(SmallConfig(false), 5);
  std::mt19937_64 rng(5);
  FeatureMatrix x = RandomFeatures(4, 3, rng);
  TokenSeq y{1, 4};
  ForwardTape tape;
  OutputLattice lat = ForwardLattice(m, x, y, &tape);
  std::vector<double> grad(m.NumParams(), 0.0);
  Backward(m, tape, LatticeGradient(4, 2, 5), grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);

  LatticeGradient lg = TransducerNllGrad(lat, y);
  std::vector<double> once(m.NumParams(), 0.0), twice(m.NumParams(), 0.0);
  Backward(m, tape, lg, once);
  Backward(m, tape, lg, twice);
  Backward(m, tape, lg, twice);
  for (size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12);
}

TEST(Backward, StaleTapeIsRejected) {
  TransducerModel m(SmallConfig(false), 6);
  std::mt19937_64 rng(6);
  FeatureMatrix x = RandomFeatures(3, 3, rng);
  ForwardTape tape;
  OutputLattice lat = ForwardLattice(m, x, TokenSeq{2}, &tape);
  m.MutableParams()[0] += 1.0;
  std::vector<double> grad(m.NumParams(), 0.0);
  EXPECT_THROW(Backward(m, tape, TransducerNllGrad(lat, TokenSeq{2}), grad),
               ContractViolation);
}

TEST(SgdStep, ZeroClipAndErrors) {
  TransducerModel m(SmallConfig(false), 7);
  std::vector<double> before(m.Params().begin(), m.Params().end());
  std::vector<double> zero(m.NumParams(), 0.0);
  SgdStep(m, zero, 0.1, 1.0);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.Params().begin()));

  std::vector<double> g(m.NumParams(), 1.0);
  double norm = SgdStep(m, g, 0.5, 2.0);
  EXPECT_NEAR(norm, std::sqrt(static_cast<double>(m.NumParams())), 1e-9);
  double moved = 0.0;
  for (size_t i = 0; i < before.size(); ++i)
    moved += std::pow(before[i] - m.Params()[i], 2);
  EXPECT_NEAR(std::sqrt(moved) / 0.5, 2.0, 1e-9);

  std::vector<double> after(m.Params().begin(), m.Params().end());
  g[3] = std::nan("");
  EXPECT_THROW(SgdStep(m, g, 0.5, 2.0), NumericError);
  EXPECT_TRUE(std::equal(after.begin(), after.end(), m.Params().begin()));
  EXPECT_THROW(SgdStep(m, zero, 0.0, 2.0), ContractViolation);
}

TEST(SgdStep, SeededRunsAreBitIdentical) {
  auto run = [] {
    TransducerModel m(SmallConfig(false), 8);
    std::mt19937_64 rng(8);
    FeatureMatrix x = RandomFeatures(5, 3, rng);
    TokenSeq y{3, 1};
    for (int step = 0; step < 5; ++step) {
      ForwardTape tape;
      OutputLattice lat = ForwardLattice(m, x, y, &tape);
      std::vector<double> grad(m.NumParams(), 0.0);
      Backward(m, tape, TransducerNllGrad(lat, y), grad);
      SgdStep(m, grad, 0.1, 5.0);
    }
    return std::vector<double>(m.Params().begin(), m.Params().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsExact) {
  TransducerModel m(SmallConfig(true), 10);
  std::stringstream ss;
  WriteModel(ss, m);
  EXPECT_EQ(ss.str().substr(0, 4), "TDKD");
  TransducerModel back = ReadModel(ss);
  EXPECT_EQ(back.Config(), m.Config());
  EXPECT_TRUE(std::equal(m.Params().begin(), m.Params().end(), back.Params().begin()));
  std::stringstream again;
  WriteModel(again, back);
  std::stringstream first;
  WriteModel(first, m);
  EXPECT_EQ(again.str(), first.str());

  std::string bytes = first.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(ReadModel(truncated), FormatError);
  std::stringstream bad("XXXX");
  EXPECT_THROW(ReadModel(bad), FormatError);
}

}  // namespace
}  // namespace tdkd

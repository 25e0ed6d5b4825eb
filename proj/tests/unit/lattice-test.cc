// tests/unit/lattice-test.cc

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

#include "tdkd/lattice.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "oracles.h"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"

namespace tdkd {
namespace {

TEST(LogSumExp, TrivialExamples) {
  std::vector<double> half{std::log(0.5), std::log(0.5)};
  EXPECT_NEAR(LogSumExp(half), 0.0, 1e-15);
  std::vector<double> with_zero{kLogZero, -1.25};
  EXPECT_EQ(LogSumExp(with_zero), -1.25);
  std::vector<double> three{0.0, 0.0, 0.0};
  EXPECT_NEAR(LogSumExp(three), std::log(3.0), 1e-15);
  std::vector<double> zeros{kLogZero, kLogZero};
  EXPECT_EQ(LogSumExp(zeros), kLogZero);
  EXPECT_THROW(LogSumExp(std::span<const double>{}), ContractViolation);
}

TEST(LogSumExp, PermutationAndShift) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs(1 + trial % 9);
    for (double &x : xs) x = normal(rng);
    double base = LogSumExp(xs);
    std::shuffle(xs.begin(), xs.end(), rng);
    EXPECT_NEAR(LogSumExp(xs), base, 1e-12);
    double c = normal(rng);
    for (double &x : xs) x += c;
    EXPECT_NEAR(LogSumExp(xs), base + c, 1e-12);
  }
}

TEST(NodeLogProb, Uniform) {
  OutputLattice lat = OutputLattice::Uniform(3, 2, 5);
  EXPECT_DOUBLE_EQ(NodeLogProb(lat, 2, 1, 4), -std::log(5.0));
  EXPECT_THROW(NodeLogProb(lat, 3, 0, 0), ContractViolation);
  EXPECT_THROW(NodeLogProb(lat, 0, 3, 0), ContractViolation);
  EXPECT_THROW(NodeLogProb(lat, 0, 0, 5), ContractViolation);
}

TEST(NodeLogProb, OneHotBlank) {
  std::vector<double> logits{0.0, kLogZero, kLogZero};
  OutputLattice lat = OutputLattice::FromLogits(1, 0, 3, logits);
  EXPECT_EQ(NodeLogProb(lat, 0, 0, kBlankId), 0.0);
}

TEST(NodeLogProb, MatchesIndependentSoftmax) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 2.0);
  const int32_t T = 3, U = 2, K = 4;
  std::vector<double> logits(T * (U + 1) * K);
  for (double &x : logits) x = normal(rng);
  OutputLattice lat = OutputLattice::FromLogits(T, U, K, logits);
  for (int32_t t = 0; t < T; ++t)
    for (int32_t u = 0; u <= U; ++u) {
      const double *z = &logits[(t * (U + 1) + u) * K];
      double denom = 0.0;
      for (int k = 0; k < K; ++k) denom += std::exp(z[k]);
      for (int k = 0; k < K; ++k)
        EXPECT_NEAR(std::exp(NodeLogProb(lat, t, u, k)), std::exp(z[k]) / denom, 1e-14);
    }
}

TEST(ValidateLattice, SoftmaxIsOk) {
  std::mt19937_64 rng(1);
  OutputLattice lat = testing::RandomLattice(4, 3, 5, rng);
  EXPECT_TRUE(ValidateLattice(lat).ok);
}

TEST(ValidateLattice, ScaledNodeIsReported) {
  std::mt19937_64 rng(2);
  OutputLattice lat = testing::RandomLattice(4, 3, 5, rng);
  for (double &x : lat.Node(2, 1)) x += std::log(2.0);
  LatticeReport r = ValidateLattice(lat);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.worst_t, 2);
  EXPECT_EQ(r.worst_u, 1);
  EXPECT_NEAR(r.worst_residual, std::abs(LogSumExp(lat.Node(2, 1))), 1e-12);
  EXPECT_NEAR(r.worst_residual, std::log(2.0), 1e-12);
}

TEST(ValidateLattice, NanIsReported) {
  OutputLattice lat = OutputLattice::Uniform(2, 1, 3);
  lat.Node(1, 0)[2] = std::nan("");
  EXPECT_FALSE(ValidateLattice(lat).ok);
}

TEST(Alignment, CountsMatchBinomial) {
  for (int32_t T = 1; T <= 6; ++T)
    for (int32_t U = 0; U <= 6; ++U) {
      TokenSeq y(U, 1);
      std::vector<Alignment> all;
      testing::EnumerateAlignments(T, y, &all);
      double binom = std::round(std::tgamma(T + U) / (std::tgamma(T) * std::tgamma(U + 1)));
      // The closing blank at (T-1, U) is fixed, so only the first T+U-1
      // steps are free: C(T+U-1, U) paths.
      EXPECT_EQ(static_cast<double>(all.size()), binom) << T << "," << U;
      for (const Alignment &a : all) {
        EXPECT_EQ(a.steps.size(), static_cast<size_t>(T + U));
        EXPECT_NO_THROW(CheckAlignment(a, T, y));
      }
    }
}

TEST(Alignment, CheckRejectsBadPaths) {
  TokenSeq y{2, 3};
  Alignment ok{{{0, 0, 2}, {0, 1, 0}, {1, 1, 3}, {1, 2, 0}}};
  EXPECT_NO_THROW(CheckAlignment(ok, 2, y));
  EXPECT_EQ(AlignmentTokens(ok), y);
  Alignment wrong_label = ok;
  wrong_label.steps[0].k = 3;
  EXPECT_THROW(CheckAlignment(wrong_label, 2, y), ContractViolation);
  Alignment early_end{{{0, 0, 2}, {0, 1, 3}, {0, 2, 0}}};
  EXPECT_THROW(CheckAlignment(early_end, 2, y), ContractViolation);
}

TEST(LatticeIo, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  OutputLattice lat = testing::RandomLattice(3, 2, 4, rng);
  lat.Node(1, 1)[2] = kLogZero;
  std::stringstream ss;
  WriteLattice(ss, lat);
  EXPECT_EQ(ss.str().substr(0, 4), "LATT");
  EXPECT_EQ(ss.str().size(), 4 + 4 * 4 + 3 * 3 * 4 * 8u);
  OutputLattice back = ReadLattice(ss);
  ASSERT_TRUE(back.SameShape(lat));
  EXPECT_TRUE(std::equal(lat.Data().begin(), lat.Data().end(), back.Data().begin()));
}

TEST(LatticeIo, BadMagicAndVersion) {
  std::stringstream bad("LATX0000");
  EXPECT_THROW(ReadLattice(bad), FormatError);
  std::stringstream ss;
  WriteLattice(ss, OutputLattice::Uniform(1, 0, 2));
  std::string s = ss.str();
  s[4] = 9;
  std::stringstream wrong(s);
  EXPECT_THROW(ReadLattice(wrong), FormatError);
}

TEST(TokenSeq, BlankIsRejected) {
  TokenSeq y{1, 0};
  EXPECT_THROW(CheckTokenSeq(y, 3), ContractViolation);
  EXPECT_THROW(Vocab(1), ContractViolation);
}

}  // namespace
}  // namespace tdkd

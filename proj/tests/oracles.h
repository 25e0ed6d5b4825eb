// tests/oracles.h

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

// Brute-force oracles shared by the unit and acceptance tests. Nothing here
// calls into the dynamic programs under test.

#ifndef TDKD_TESTS_ORACLES_H_
#define TDKD_TESTS_ORACLES_H_

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "tdkd/lattice.h"

namespace tdkd::testing {

inline OutputLattice RandomLattice(int32_t T, int32_t U, int32_t K,
                                   std::mt19937_64 &rng, double scale = 1.5) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> logits(static_cast<size_t>(T) * (U + 1) * K);
  for (double &x : logits) x = normal(rng);
  return OutputLattice::FromLogits(T, U, K, logits);
}

inline TokenSeq RandomTokens(int32_t U, int32_t K, std::mt19937_64 &rng) {
  std::uniform_int_distribution<int32_t> pick(1, K - 1);
  TokenSeq y(U);
  for (auto &k : y) k = pick(rng);
  return y;
}

// Every monotone path from (0,0): label steps emit y[u] in place, blank
// steps advance time, and the final step is the blank at (T-1, U).
inline void EnumerateAlignments(int32_t T, std::span<const int32_t> y,
                                std::vector<Alignment> *out) {
  const int32_t U = static_cast<int32_t>(y.size());
  Alignment cur;
  std::function<void(int32_t, int32_t)> walk = [&](int32_t t, int32_t u) {
    if (u < U) {
      cur.steps.push_back({t, u, y[u]});
      walk(t, u + 1);
      cur.steps.pop_back();
    }
    if (t < T - 1 || u == U) {
      cur.steps.push_back({t, u, kBlankId});
      if (t == T - 1)
        out->push_back(cur);
      else
        walk(t + 1, u);
      cur.steps.pop_back();
    }
  };
  walk(0, 0);
}

// Path log-probability, summed in path order.
inline double PathScore(const OutputLattice &lat, const Alignment &a) {
  double s = 0.0;
  for (const auto &st : a.steps) s += lat.Node(st.t, st.u)[st.k];
  return s;
}

inline double EnumeratedLogProb(const OutputLattice &lat, std::span<const int32_t> y) {
  std::vector<Alignment> all;
  EnumerateAlignments(lat.NumFrames(), y, &all);
  double m = -INFINITY;
  for (const auto &a : all) m = std::max(m, PathScore(lat, a));
  if (m == -INFINITY) return m;
  double sum = 0.0;
  for (const auto &a : all) sum += std::exp(PathScore(lat, a) - m);
  return m + std::log(sum);
}

// Central differences of f with respect to every raw logit of a lattice
// that is re-normalized on each evaluation.
inline std::vector<double> LogitFiniteDiff(
    int32_t T, int32_t U, int32_t K, std::vector<double> logits,
    const std::function<double(const OutputLattice &)> &f, double h = 1e-5) {
  std::vector<double> grad(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    double keep = logits[i];
    logits[i] = keep + h;
    double up = f(OutputLattice::FromLogits(T, U, K, logits));
    logits[i] = keep - h;
    double down = f(OutputLattice::FromLogits(T, U, K, logits));
    logits[i] = keep;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

// max |a-b| / max(|a|, |b|, floor): relative error with an absolute floor so
// entries that are analytically zero do not blow up the ratio.
inline double MaxRelativeError(std::span<const double> a, std::span<const double> b,
                               double floor = 1e-3) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace tdkd::testing

#endif  // TDKD_TESTS_ORACLES_H_

// core/src/transducer-loss.cc

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

#include "tdkd/transducer-loss.h"

#include <algorithm>
#include <cmath>

#include "tdkd/errors.h"
#include "tdkd/log-math.h"

namespace tdkd {

namespace {

void CheckInputs(const OutputLattice &lattice, std::span<const int32_t> tokens) {
  Require(lattice.NumFrames() >= 1, "transducer loss needs T >= 1");
  Require(static_cast<size_t>(lattice.NumLabels()) == tokens.size(),
          "label count does not match lattice U");
  CheckTokenSeq(tokens, lattice.VocabSize());
}

}  // namespace

TransducerLoss TransducerNll(const OutputLattice &lattice,
                             std::span<const int32_t> tokens) {
  CheckInputs(lattice, tokens);
  const int32_t T = lattice.NumFrames();
  const int32_t U = lattice.NumLabels();

  TransducerLoss result;
  ForwardBackwardTable &tab = result.table;
  tab.num_frames = T;
  tab.num_labels = U;
  tab.alpha.assign(static_cast<size_t>(T) * (U + 1), kLogZero);
  tab.beta.assign(static_cast<size_t>(T) * (U + 1), kLogZero);

  // alpha(t,u) = logadd(alpha(t-1,u) + blank(t-1,u), alpha(t,u-1) + y_u(t,u-1))
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) {
        tab.alpha[0] = 0.0;
        continue;
      }
      double from_blank = kLogZero, from_label = kLogZero;
      if (t > 0)
        from_blank = tab.Alpha(t - 1, u) + lattice.Node(t - 1, u)[kBlankId];
      if (u > 0)
        from_label = tab.Alpha(t, u - 1) + lattice.Node(t, u - 1)[tokens[u - 1]];
      tab.alpha[tab.Index(t, u)] = LogAdd(from_blank, from_label);
    }
  }

  for (int32_t t = T - 1; t >= 0; --t) {
    for (int32_t u = U; u >= 0; --u) {
      auto node = lattice.Node(t, u);
      if (t == T - 1 && u == U) {
        tab.beta[tab.Index(t, u)] = node[kBlankId];
        continue;
      }
      double via_blank = kLogZero, via_label = kLogZero;
      if (t + 1 < T) via_blank = tab.Beta(t + 1, u) + node[kBlankId];
      if (u < U) via_label = tab.Beta(t, u + 1) + node[tokens[u]];
      tab.beta[tab.Index(t, u)] = LogAdd(via_blank, via_label);
    }
  }

  tab.total_logprob = tab.Alpha(T - 1, U) + lattice.Node(T - 1, U)[kBlankId];
  result.loss = -tab.total_logprob;
  return result;
}

LatticeGradient TransducerNllGrad(const OutputLattice &lattice,
                                  std::span<const int32_t> tokens,
                                  const ForwardBackwardTable &tab) {
  CheckInputs(lattice, tokens);
  const int32_t T = lattice.NumFrames();
  const int32_t U = lattice.NumLabels();
  const int32_t K = lattice.VocabSize();
  Require(tab.num_frames == T && tab.num_labels == U,
          "forward-backward table does not match lattice");
  if (!std::isfinite(tab.total_logprob))
    throw NumericError("transducer loss is infinite; gradient undefined");

  LatticeGradient grad(T, U, K);
  const double total = tab.total_logprob;
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      double alpha = tab.Alpha(t, u);
      if (alpha == kLogZero) continue;
      auto node = lattice.Node(t, u);
      auto g = grad.Node(t, u);

      // Posterior of each outgoing transition.
      double post_blank = 0.0, post_label = 0.0;
      if (t + 1 < T) {
        post_blank = std::exp(alpha + node[kBlankId] + tab.Beta(t + 1, u) - total);
      } else if (u == U) {
        post_blank = std::exp(alpha + node[kBlankId] - total);
      }
      if (u < U)
        post_label = std::exp(alpha + node[tokens[u]] + tab.Beta(t, u + 1) - total);

      double occupancy = post_blank + post_label;
      for (int32_t k = 0; k < K; ++k) g[k] = std::exp(node[k]) * occupancy;
      g[kBlankId] -= post_blank;
      if (u < U) g[tokens[u]] -= post_label;
    }
  }
  return grad;
}

LatticeGradient TransducerNllGrad(const OutputLattice &lattice,
                                  std::span<const int32_t> tokens) {
  TransducerLoss fb = TransducerNll(lattice, tokens);
  return TransducerNllGrad(lattice, tokens, fb.table);
}

ViterbiResult ViterbiAlignment(const OutputLattice &lattice,
                               std::span<const int32_t> tokens) {
  CheckInputs(lattice, tokens);
  const int32_t T = lattice.NumFrames();
  const int32_t U = lattice.NumLabels();
  const size_t width = static_cast<size_t>(U) + 1;

  // best[t][u]: best score of reaching (t,u); from_blank[t][u]: whether the
  // best predecessor is (t-1,u) via blank (else (t,u-1) via label).
  std::vector<double> best(static_cast<size_t>(T) * width, kLogZero);
  std::vector<char> from_blank(best.size(), 0);
  for (int32_t t = 0; t < T; ++t) {
    for (int32_t u = 0; u <= U; ++u) {
      size_t i = t * width + u;
      if (t == 0 && u == 0) {
        best[i] = 0.0;
        continue;
      }
      double via_blank = kLogZero, via_label = kLogZero;
      if (t > 0) via_blank = best[i - width] + lattice.Node(t - 1, u)[kBlankId];
      if (u > 0) via_label = best[i - 1] + lattice.Node(t, u - 1)[tokens[u - 1]];
      if (u == 0 || (t > 0 && via_blank >= via_label)) {
        best[i] = via_blank;
        from_blank[i] = 1;
      } else {
        best[i] = via_label;
      }
    }
  }

  ViterbiResult result;
  result.score = best[(T - 1) * width + U] + lattice.Node(T - 1, U)[kBlankId];

  std::vector<AlignmentStep> &steps = result.alignment.steps;
  steps.reserve(static_cast<size_t>(T) + U);
  steps.push_back({T - 1, U, kBlankId});
  int32_t t = T - 1, u = U;
  while (t > 0 || u > 0) {
    if (from_blank[t * width + u]) {
      --t;
      steps.push_back({t, u, kBlankId});
    } else {
      --u;
      steps.push_back({t, u, tokens[u]});
    }
  }
  std::reverse(steps.begin(), steps.end());
  return result;
}

}  // namespace tdkd

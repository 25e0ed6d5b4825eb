// tdkd/transducer-loss.h

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

#ifndef TDKD_TRANSDUCER_LOSS_H_
#define TDKD_TRANSDUCER_LOSS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "tdkd/lattice.h"

namespace tdkd {

/*
  Log-domain forward/backward scores over the T x (U+1) grid.

  alpha(t, u) is the log-probability of all partial paths from (0, 0) that
  reach node (t, u) before emitting anything there; alpha(0, 0) = 0.

  beta(t, u) is the log-probability of finishing from (t, u), including the
  final blank at (T-1, U); so beta(T-1, U) = log p(blank | T-1, U) and
  alpha(t, u) + beta(t, u) is the log-mass of all alignments through (t, u).
*/
struct ForwardBackwardTable {
  int32_t num_frames = 0;
  int32_t num_labels = 0;
  std::vector<double> alpha;
  std::vector<double> beta;
  double total_logprob = 0.0;

  double Alpha(int32_t t, int32_t u) const { return alpha[Index(t, u)]; }
  double Beta(int32_t t, int32_t u) const { return beta[Index(t, u)]; }
  size_t Index(int32_t t, int32_t u) const {
    return static_cast<size_t>(t) * (num_labels + 1) + u;
  }
};

struct TransducerLoss {
  /// -log p(y | X); +inf when no alignment has non-zero probability.
  double loss = 0.0;
  ForwardBackwardTable table;
};

/// Transducer negative log-likelihood of `tokens` under `lattice`.
/// Requires lattice.NumLabels() == tokens.size() and at least one frame.
TransducerLoss TransducerNll(const OutputLattice &lattice,
                             std::span<const int32_t> tokens);

/// Gradient of TransducerNll with respect to the pre-softmax logits of every
/// node: p(k|t,u) * occupancy(t,u) - posterior of taking k out of (t,u).
/// Throws NumericError when the total probability is zero.
LatticeGradient TransducerNllGrad(const OutputLattice &lattice,
                                  std::span<const int32_t> tokens,
                                  const ForwardBackwardTable &table);
LatticeGradient TransducerNllGrad(const OutputLattice &lattice,
                                  std::span<const int32_t> tokens);

struct ViterbiResult {
  Alignment alignment;
  /// Sum of emission log-probabilities along the path.
  double score = 0.0;
};

/// Highest-scoring alignment. On ties the path that reached a node by a
/// blank step wins, so labels are emitted as early as possible.
ViterbiResult ViterbiAlignment(const OutputLattice &lattice,
                               std::span<const int32_t> tokens);

}  // namespace tdkd

#endif  // TDKD_TRANSDUCER_LOSS_H_

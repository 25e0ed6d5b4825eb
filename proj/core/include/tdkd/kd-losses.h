// tdkd/kd-losses.h

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

// Distillation losses for transducers. Every loss is a cross-entropy against
// fixed teacher distributions, -sum_k P_T(k) log P_S(k), summed over a set of
// lattice nodes:
//
//   full lattice:  every node of the T x (U+1) grid, K classes per node;
//   collapsed:     every node, classes reduced to (blank, next label, rest);
//   one-best:      only the nodes on the teacher's best alignment, with the
//                  student node taken `tau` frames later for streaming
//                  students. Nodes shifted past the last frame are dropped.
//
// Gradients are with respect to student pre-softmax logits.

#ifndef TDKD_KD_LOSSES_H_
#define TDKD_KD_LOSSES_H_

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tdkd/lattice.h"

namespace tdkd {

enum class KdVariant { kFullLattice, kCollapsed, kOneBest };

const char *KdVariantName(KdVariant v);
/// Accepts "full", "collapsed" and "onebest"; throws ConfigError otherwise.
KdVariant ParseKdVariant(const std::string &name);

struct KdConfig {
  /// Weight of the distillation term in nll + lambda * kd.
  double lambda = 0.1;
  /// Frame delay of student nodes relative to teacher nodes (one-best only).
  int32_t tau = 0;
  /// LM weight for shallow-fusion targets; 0 disables fusion.
  double beta_lm = 0.0;
  KdVariant variant = KdVariant::kOneBest;

  void Check() const;
};

/// One-best distillation payload for one utterance: the teacher's best
/// alignment plus its full log-distribution at each node on it.
struct KdTargetSet {
  std::string id;
  Alignment alignment;
  int32_t vocab_size = 0;
  /// steps.size() * vocab_size teacher log-probs, one K-vector per step.
  std::vector<double> node_log_probs;
  bool fused = false;
  double beta = 0.0;
  bool tau_applicable = true;

  int32_t NumFrames() const;
  int32_t NumLabels() const;
  std::span<const double> NodeDist(size_t step) const {
    return {node_log_probs.data() + step * vocab_size,
            static_cast<size_t>(vocab_size)};
  }
  std::span<double> NodeDist(size_t step) {
    return {node_log_probs.data() + step * vocab_size,
            static_cast<size_t>(vocab_size)};
  }
  /// Number of stored floats: K * (T + U).
  int64_t StoredValueCount() const {
    return static_cast<int64_t>(node_log_probs.size());
  }
};

/// Teacher best path for `tokens` and the node distributions along it.
KdTargetSet MakeOneBestTargets(const std::string &id,
                               const OutputLattice &teacher,
                               std::span<const int32_t> tokens);

/// Per node (p_blank, p_correct, p_rest) in the probability domain.
class CollapsedTargetLattice {
 public:
  CollapsedTargetLattice() = default;
  CollapsedTargetLattice(int32_t num_frames, int32_t num_labels);

  int32_t NumFrames() const { return num_frames_; }
  int32_t NumLabels() const { return num_labels_; }
  std::array<double, 3> &At(int32_t t, int32_t u) {
    return probs_[static_cast<size_t>(t) * (num_labels_ + 1) + u];
  }
  const std::array<double, 3> &At(int32_t t, int32_t u) const {
    return probs_[static_cast<size_t>(t) * (num_labels_ + 1) + u];
  }
  /// Number of stored floats: 3 * T * (U + 1).
  int64_t StoredValueCount() const {
    return 3 * static_cast<int64_t>(probs_.size());
  }

 private:
  int32_t num_frames_ = 0;
  int32_t num_labels_ = 0;
  std::vector<std::array<double, 3>> probs_;
};

/// Stored floats of a full-lattice target: K * T * (U + 1).
inline int64_t FullLatticeStoredValueCount(const OutputLattice &lattice) {
  return static_cast<int64_t>(lattice.Data().size());
}

/// Collapses a normalized probability vector to (blank, correct, rest).
/// `correct` is the next reference label, or nullopt after the last label,
/// in which case the correct slot is 0. rest = 1 - blank - correct.
std::array<double, 3> CollapseNode(std::span<const double> probs,
                                   std::optional<int32_t> correct);

CollapsedTargetLattice CollapseLattice(const OutputLattice &teacher,
                                       std::span<const int32_t> tokens);

double KdFullLattice(const OutputLattice &teacher, const OutputLattice &student);
LatticeGradient KdFullLatticeGrad(const OutputLattice &teacher,
                                  const OutputLattice &student);
/// Cross-entropy minus teacher entropy, i.e. the KL divergence summed over
/// nodes. Reporting only; it has the same gradient as KdFullLattice.
double KlFullLattice(const OutputLattice &teacher, const OutputLattice &student);

double KdCollapsed(const CollapsedTargetLattice &teacher,
                   const OutputLattice &student, std::span<const int32_t> tokens);
LatticeGradient KdCollapsedGrad(const CollapsedTargetLattice &teacher,
                                const OutputLattice &student,
                                std::span<const int32_t> tokens);

double KdOneBest(const KdTargetSet &target, const OutputLattice &student,
                 int32_t tau);
LatticeGradient KdOneBestGrad(const KdTargetSet &target,
                              const OutputLattice &student, int32_t tau);

/// Shallow-fusion targets: per node softmax(log Z_T + beta * log LM) where
/// `lm_log_probs[i]` is the LM step distribution for node i (K entries,
/// blank entry ignored). The blank LM score is 0 on nodes where the teacher
/// path emits blank and the minimum non-blank LM log-score otherwise.
KdTargetSet FuseTargets(const KdTargetSet &target,
                        std::span<const std::vector<double>> lm_log_probs,
                        double beta);

/// nll + lambda * kd.
double CombinedLoss(double nll, double kd, double lambda);

// KD target cache: JSON Lines, one object per utterance:
//   {"id": str, "alignment": [[t,u,k],...], "dists": [[K log-probs],...],
//    "fused": bool, "beta": float}
// t and u are 0-based. -inf log-probs are written as null.
void WriteTargetCache(std::ostream &os, std::span<const KdTargetSet> targets);
std::vector<KdTargetSet> ReadTargetCache(std::istream &is);
std::string TargetToJsonLine(const KdTargetSet &target);
KdTargetSet TargetFromJsonLine(const std::string &line);

}  // namespace tdkd

#endif  // TDKD_KD_LOSSES_H_

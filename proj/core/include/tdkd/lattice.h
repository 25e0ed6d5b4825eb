// tdkd/lattice.h

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

#ifndef TDKD_LATTICE_H_
#define TDKD_LATTICE_H_

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace tdkd {

/// The blank symbol is always id 0.
inline constexpr int32_t kBlankId = 0;

/// Non-blank label ids, each in [1, K).
using TokenSeq = std::vector<int32_t>;

/// Throws ContractViolation if any token is blank or out of [1, vocab_size).
void CheckTokenSeq(std::span<const int32_t> tokens, int32_t vocab_size);

/// Output vocabulary: K symbols, blank at id 0.
class Vocab {
 public:
  explicit Vocab(int32_t size);
  int32_t Size() const { return size_; }
  int32_t BlankId() const { return kBlankId; }

 private:
  int32_t size_;
};

/// Dense (t, u, k) array over a T x (U+1) grid with K values per node.
/// Storage is row-major: t outer, u middle, k inner. Indices are 0-based,
/// node (t, u) meaning "frame t, u labels already emitted".
class NodeArray {
 public:
  NodeArray() = default;
  NodeArray(int32_t num_frames, int32_t num_labels, int32_t vocab_size,
            double fill = 0.0);

  int32_t NumFrames() const { return num_frames_; }
  int32_t NumLabels() const { return num_labels_; }
  int32_t VocabSize() const { return vocab_size_; }
  int64_t NumNodes() const {
    return static_cast<int64_t>(num_frames_) * (num_labels_ + 1);
  }
  bool SameShape(const NodeArray &other) const {
    return num_frames_ == other.num_frames_ &&
           num_labels_ == other.num_labels_ &&
           vocab_size_ == other.vocab_size_;
  }

  std::span<const double> Node(int32_t t, int32_t u) const {
    return {data_.data() + Offset(t, u), static_cast<size_t>(vocab_size_)};
  }
  std::span<double> Node(int32_t t, int32_t u) {
    return {data_.data() + Offset(t, u), static_cast<size_t>(vocab_size_)};
  }
  /// All nodes of frame t, (U+1)*K contiguous values.
  std::span<const double> Frame(int32_t t) const;
  std::span<double> Frame(int32_t t);

  std::span<const double> Data() const { return data_; }
  std::span<double> Data() { return data_; }

  void CheckIndex(int32_t t, int32_t u, int32_t k) const;

 private:
  size_t Offset(int32_t t, int32_t u) const {
    return (static_cast<size_t>(t) * (num_labels_ + 1) + u) * vocab_size_;
  }

  int32_t num_frames_ = 0;
  int32_t num_labels_ = 0;
  int32_t vocab_size_ = 0;
  std::vector<double> data_;
};

/// Per-node log-distributions log p(k | t, u). Each node should be
/// normalized; ValidateLattice() checks it.
class OutputLattice : public NodeArray {
 public:
  using NodeArray::NodeArray;

  /// Log-softmax of raw per-node logits laid out in storage order.
  static OutputLattice FromLogits(int32_t num_frames, int32_t num_labels,
                                  int32_t vocab_size,
                                  std::span<const double> logits);
  static OutputLattice Uniform(int32_t num_frames, int32_t num_labels,
                               int32_t vocab_size);
};

/// d(loss)/d(logit) for every (t, u, k).
class LatticeGradient : public NodeArray {
 public:
  using NodeArray::NodeArray;
};

/// Checked read of log p(k | t, u).
double NodeLogProb(const OutputLattice &lattice, int32_t t, int32_t u,
                   int32_t k);

struct LatticeReport {
  bool ok = true;
  /// max over nodes of |logsumexp(node)|, and the node where it occurs.
  double worst_residual = 0.0;
  int32_t worst_t = -1;
  int32_t worst_u = -1;
  /// Number of NaN or +inf entries.
  int64_t bad_entries = 0;
  std::string message;
};

/// Checks normalization (tolerance 1e-6) and that entries are finite or -inf.
LatticeReport ValidateLattice(const OutputLattice &lattice,
                              double tolerance = 1e-6);

struct AlignmentStep {
  int32_t t;
  int32_t u;
  int32_t k;
  bool operator==(const AlignmentStep &) const = default;
};

/// A monotone path through the lattice: one step per visited node, T blank
/// steps and U label steps. It starts at (0, 0); a blank step at (t, u) moves
/// to (t+1, u); a label step at (t, u) emits y[u] and moves to (t, u+1). The
/// last step is the blank at (T-1, U).
struct Alignment {
  std::vector<AlignmentStep> steps;
  bool operator==(const Alignment &) const = default;
};

/// Throws ContractViolation unless `alignment` is a valid path for a lattice
/// with `num_frames` frames and label sequence `tokens`.
void CheckAlignment(const Alignment &alignment, int32_t num_frames,
                    std::span<const int32_t> tokens);

/// Same check without a label sequence; only the blank/non-blank pattern
/// and the (t, u) path are verified.
void CheckAlignmentShape(const Alignment &alignment, int32_t num_frames,
                         int32_t num_labels);

/// Label sequence emitted by an alignment.
TokenSeq AlignmentTokens(const Alignment &alignment);

// Binary format: "LATT", u32 version, u32 T, u32 U, u32 K, then
// T*(U+1)*K little-endian float64 in storage order.
inline constexpr uint32_t kLatticeFormatVersion = 1;
void WriteLattice(std::ostream &os, const OutputLattice &lattice);
OutputLattice ReadLattice(std::istream &is);

}  // namespace tdkd

#endif  // TDKD_LATTICE_H_

// tdkd/decoding.h

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

#ifndef TDKD_DECODING_H_
#define TDKD_DECODING_H_

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdkd/lattice.h"
#include "tdkd/ngram-lm.h"
#include "tdkd/nnet.h"

namespace tdkd {

/// Frame-synchronous source of transducer output distributions. The
/// prediction-network state is an opaque vector advanced one label at a time.
class TransducerScorer {
 public:
  virtual ~TransducerScorer() = default;
  virtual int32_t NumFrames() const = 0;
  virtual int32_t VocabSize() const = 0;
  virtual std::vector<double> InitialState() const = 0;
  virtual std::vector<double> NextState(const std::vector<double> &state,
                                        int32_t token) const = 0;
  /// log p(. | t, state) into `out` (K entries).
  virtual void FrameLogProbs(int32_t t, const std::vector<double> &state,
                             std::span<double> out) const = 0;
};

/// Scores with a trained model; the encoder runs once at construction.
class ModelScorer : public TransducerScorer {
 public:
  ModelScorer(const TransducerModel &model, const FeatureMatrix &features);
  int32_t NumFrames() const override { return num_frames_; }
  int32_t VocabSize() const override { return model_.Config().vocab_size; }
  std::vector<double> InitialState() const override;
  std::vector<double> NextState(const std::vector<double> &state,
                                int32_t token) const override;
  void FrameLogProbs(int32_t t, const std::vector<double> &state,
                     std::span<double> out) const override;

 private:
  // State layout: [g (pred_hidden), W_g g + b_j (joint_hidden)].
  std::vector<double> StateFromInput(const Eigen::VectorXd &embedding,
                                     const Eigen::VectorXd &prev_g) const;

  const TransducerModel &model_;
  int32_t num_frames_;
  Eigen::MatrixXd joint_enc_;  // J x T
};

/// Reads a fixed lattice: the state is the number of labels emitted so far.
/// Beyond the last lattice column only blank is possible.
class LatticeScorer : public TransducerScorer {
 public:
  explicit LatticeScorer(const OutputLattice &lattice) : lattice_(lattice) {}
  int32_t NumFrames() const override { return lattice_.NumFrames(); }
  int32_t VocabSize() const override { return lattice_.VocabSize(); }
  std::vector<double> InitialState() const override { return {0.0}; }
  std::vector<double> NextState(const std::vector<double> &state,
                                int32_t) const override {
    return {state[0] + 1.0};
  }
  void FrameLogProbs(int32_t t, const std::vector<double> &state,
                     std::span<double> out) const override;

 private:
  const OutputLattice &lattice_;
};

struct Hypothesis {
  TokenSeq tokens;
  double score = 0.0;
  /// 0-based frame at which each token was emitted; nondecreasing.
  std::vector<int32_t> emission_frames;
};

/// Per frame, emit the argmax symbol while it is non-blank, at most
/// `max_symbols_per_frame` times, then advance.
Hypothesis GreedyDecode(const TransducerScorer &scorer,
                        int32_t max_symbols_per_frame = 10);

struct BeamOptions {
  int32_t beam = 4;
  /// Shallow fusion: symbols are scored by softmax(log p + lm_weight * log LM)
  /// with the same blank rule as fused KD targets.
  const NgramLm *lm = nullptr;
  double lm_weight = 0.0;
  int32_t max_symbols_per_frame = 10;
};

/*
  Frame-synchronous transducer beam search. Within a frame every active
  hypothesis proposes its blank (ends the frame) and non-blank extensions
  (stay in the frame); the best `beam` proposals survive each expansion
  round. Proposals with identical label sequences are merged by log-sum-exp.
  With beam = 1 this reduces exactly to GreedyDecode. Returns at most `beam`
  hypotheses sorted by descending score.
*/
std::vector<Hypothesis> BeamDecode(const TransducerScorer &scorer,
                                   const BeamOptions &options);

struct WerReport {
  int64_t substitutions = 0;
  int64_t deletions = 0;
  int64_t insertions = 0;
  int64_t ref_words = 0;
  double wer = 0.0;
  /// Set when the reference is empty and the hypothesis is not.
  bool infinite = false;

  int64_t Errors() const { return substitutions + deletions + insertions; }
  /// Accumulates counts and recomputes the ratio.
  WerReport &operator+=(const WerReport &other);
};

/// Unit-cost Levenshtein alignment; the backtrace prefers substitution, then
/// insertion, then deletion when several edits tie.
WerReport ComputeWer(std::span<const std::string> ref,
                     std::span<const std::string> hyp);
WerReport ComputeWer(std::span<const int32_t> ref, std::span<const int32_t> hyp);

/// Mean over tokens of (streaming frame - non-streaming frame). The two
/// hypotheses must carry the same label sequence.
double EmissionLag(const Hypothesis &streaming, const Hypothesis &non_streaming);

/// Word used for label k in transcripts ("w3" for k = 3).
std::string TokenWord(int32_t k);
std::string TokensToText(std::span<const int32_t> tokens);

// Hypothesis output: JSON Lines
//   {"id": str, "tokens": [ints], "text": str, "score": float, "frames": [ints]}
std::string HypothesisToJsonLine(const std::string &id, const Hypothesis &hyp);
std::pair<std::string, Hypothesis> HypothesisFromJsonLine(const std::string &line);

}  // namespace tdkd

#endif  // TDKD_DECODING_H_

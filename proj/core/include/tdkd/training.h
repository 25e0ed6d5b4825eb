// tdkd/training.h

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

#ifndef TDKD_TRAINING_H_
#define TDKD_TRAINING_H_

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tdkd/corpus.h"
#include "tdkd/decoding.h"
#include "tdkd/kd-losses.h"
#include "tdkd/nnet.h"
#include "tdkd/ngram-lm.h"

namespace tdkd {

struct ScheduleConfig {
  int32_t epochs = 20;
  double learning_rate = 0.05;
  /// Multiplies the learning rate after every epoch.
  double lr_decay = 1.0;
  double clip = 5.0;
  int32_t batch_size = 8;

  void Check() const;
  nlohmann::json ToJson() const;
  static ScheduleConfig FromJson(const nlohmann::json &j);
};

/// One utterance of training data together with whatever targets the
/// selected loss needs. Target pointers must outlive training.
struct TrainingItem {
  const Utterance *utt = nullptr;
  /// Reference or pseudo transcription.
  TokenSeq tokens;
  bool apply_nll = true;
  const KdTargetSet *one_best = nullptr;
  const OutputLattice *full_target = nullptr;
  const CollapsedTargetLattice *collapsed_target = nullptr;
};

/// Loss of one item: nll (if applied) + lambda * kd. Returns the loss and
/// adds its parameter gradient into `grad`.
double ItemLossAndGradient(const TransducerModel &model, const TrainingItem &item,
                           const KdConfig &kd, std::span<double> grad);

struct EpochLog {
  int32_t epoch = 0;
  double train_loss = 0.0;
  double dev_wer = 0.0;
};

struct TrainOutcome {
  TransducerModel model;
  std::vector<EpochLog> epochs;
  int32_t best_epoch = 0;
  double best_dev_wer = 0.0;
};

/*
  Minibatch SGD on nll + lambda * kd, averaged over each batch. The item
  order is reshuffled each epoch from `seed`; per-item gradients may be
  computed concurrently and are summed in item order. After every epoch the
  model is scored on `dev` with greedy decoding and the best epoch (lowest
  WER, earliest on ties) is returned. lambda = 0 skips the KD term entirely.
  Throws NumericError if the loss becomes non-finite.
*/
TrainOutcome TrainTransducer(TransducerModel init, std::span<const TrainingItem> items,
                             std::span<const Utterance> dev,
                             const ScheduleConfig &schedule, const KdConfig &kd,
                             uint64_t seed, std::ostream *log = nullptr);

struct TargetOptions {
  int32_t beam = 4;
  /// Required when fuse is set.
  const NgramLm *lm = nullptr;
  bool fuse = false;
  double beta = 0.0;
};

struct GeneratedTargets {
  std::vector<KdTargetSet> targets;
  /// Pseudo transcriptions of utterances without reference tokens.
  std::vector<std::pair<std::string, Hypothesis>> pseudo;
};

/// Labelled utterances are aligned against their reference; the rest are
/// first transcribed by teacher beam search (with fusion if requested). The
/// teacher's one-best node distributions are then cached, fused with the LM
/// when `fuse` is set.
GeneratedTargets MakeTargets(const TransducerModel &teacher,
                             std::span<const Utterance> utts,
                             const TargetOptions &options);

struct EvalOptions {
  int32_t beam = 1;
  const NgramLm *lm = nullptr;
  double beta = 0.0;
};

/// Corpus WER of the model's top hypotheses against `refs`.
WerReport Evaluate(const TransducerModel &model, std::span<const Utterance> utts,
                   const References &refs, const EvalOptions &options,
                   std::vector<std::pair<std::string, Hypothesis>> *hyps = nullptr);

/// Dev WER with greedy decoding, using each utterance's own tokens.
double GreedyWer(const TransducerModel &model, std::span<const Utterance> utts);

}  // namespace tdkd

#endif  // TDKD_TRAINING_H_

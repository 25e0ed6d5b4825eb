// tdkd/corpus.h

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

// Synthetic speech-like corpus. Each label is rendered as a run of frames of
// its class-mean vector plus Gaussian noise; the label prior is Zipfian so an
// n-gram LM carries real information.

#ifndef TDKD_CORPUS_H_
#define TDKD_CORPUS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdkd/lattice.h"
#include "tdkd/nnet.h"

namespace tdkd {

struct SynthConfig {
  int32_t vocab_size = 12;
  int32_t feature_dim = 8;
  int32_t frames_per_token = 4;
  double noise = 1.0;
  /// Each token's run length varies by +-1 frame.
  bool jitter = true;
  int32_t min_tokens = 2;
  int32_t max_tokens = 6;
  double zipf_exponent = 1.2;
  /// Probability that a token after the first is drawn from a Zipf prior
  /// ranked by a permutation specific to the preceding context_order tokens
  /// instead of the global ranking. 0 gives independent tokens.
  double context_weight = 0.0;
  int32_t context_order = 1;
  /// Zipf exponent of the context-specific successor ranking.
  double context_exponent = 1.2;
  int32_t n_labelled = 120;
  int32_t n_unlabelled = 1032;
  int32_t n_dev = 100;
  int32_t n_test = 100;
  /// Text-only sentences for LM training.
  int32_t n_lm_text = 2000;
  uint64_t seed = 1;

  void Check() const;
  nlohmann::json ToJson() const;
  static SynthConfig FromJson(const nlohmann::json &j);
};

enum class Split { kLabelled, kUnlabelled, kDev, kTest };
const char *SplitName(Split split);
Split ParseSplit(const std::string &name);

struct Utterance {
  std::string id;
  FeatureMatrix features;
  /// Absent for unlabelled utterances.
  std::optional<TokenSeq> tokens;
};

/// Transcripts keyed by utterance id.
using References = std::map<std::string, TokenSeq>;

struct Dataset {
  std::vector<Utterance> labelled;
  std::vector<Utterance> unlabelled;
  std::vector<Utterance> dev;
  std::vector<Utterance> test;
  /// Held-out transcripts of the unlabelled split, for scoring only.
  References sealed_unlabelled;
  std::vector<TokenSeq> lm_text;
  /// Row k-1 is the mean vector of label k.
  Eigen::MatrixXd class_means;

  const std::vector<Utterance> &Get(Split split) const;
};

Dataset GenerateDataset(const SynthConfig &config);

// Directory layout written by SaveDataset:
//   synth.json                config used for generation
//   <split>.json              manifest {"version", "split", "features",
//                             "transcripts", "utterances": [{"id", "offset",
//                             "frames", "dim"}]}
//   <split>.feat              packed records "FEAT", u32 T, u32 d, T*d float64
//   <split>.jsonl             transcripts {"id", "tokens", "text"} (labelled,
//                             dev, test)
//   unlabelled.sealed.jsonl   references of the unlabelled split
//   lm_text.jsonl             text-only LM corpus
inline constexpr uint32_t kDatasetFormatVersion = 1;
void SaveDataset(const std::string &dir, const SynthConfig &config,
                 const Dataset &data);
/// Loads one split. Unlabelled utterances never carry transcripts.
std::vector<Utterance> LoadSplit(const std::string &dir, Split split);
/// Reference transcripts for scoring: dev/test/labelled transcripts, or the
/// sealed file for the unlabelled split.
References LoadReferences(const std::string &dir, Split split);
std::vector<TokenSeq> LoadLmText(const std::string &dir);
SynthConfig LoadSynthConfig(const std::string &dir);

void WriteTranscripts(const std::string &path,
                      const std::vector<std::pair<std::string, TokenSeq>> &rows);
std::vector<std::pair<std::string, TokenSeq>> ReadTranscripts(const std::string &path);

}  // namespace tdkd

#endif  // TDKD_CORPUS_H_

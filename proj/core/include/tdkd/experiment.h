// tdkd/experiment.h

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

// The teacher/student experiment harness: one pipeline per seed (data,
// teacher, LM, distillation targets, students under every strategy) and the
// results table the trend checks read from.

#ifndef TDKD_EXPERIMENT_H_
#define TDKD_EXPERIMENT_H_

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdkd/corpus.h"
#include "tdkd/kd-losses.h"
#include "tdkd/nnet.h"
#include "tdkd/ngram-lm.h"
#include "tdkd/training.h"

namespace tdkd {

enum class Strategy { kBaseline, kPseudoOnly, kSt1, kSt2 };
const char *StrategyName(Strategy s);
/// Accepts "baseline", "pseudo" (or "pseudo_only"), "st1", "st2".
Strategy ParseStrategy(const std::string &name);

/// Independent seeds derived from one experiment seed, so the CLI and the
/// harness reproduce each other's checkpoints.
enum class SeedStream : uint32_t { kTeacherInit = 1, kTeacherShuffle = 2, kStudent = 3 };
uint64_t DeriveSeed(uint64_t seed, SeedStream stream);

struct LmConfig {
  int32_t order = 2;
  double alpha = 1.0;
};

/// One student training job.
struct StudentJob {
  Strategy strategy = Strategy::kBaseline;
  KdConfig kd;
  bool streaming = false;
  bool use_unlabelled = false;
  /// Apply the transducer loss to pseudo transcriptions as well.
  bool pseudo_nll = true;
  /// Required for ST2.
  const TransducerModel *init = nullptr;

  /// Enforces the strategy rules: baseline and pseudo-only train with
  /// lambda = 0, pseudo-only needs unlabelled data, ST2 needs `init`.
  /// Returns the job with lambda forced where the strategy fixes it.
  StudentJob Normalized() const;
};

/// Training material for a student. Target and pseudo vectors are aligned
/// with the utterance vectors by index.
struct StudentData {
  std::span<const Utterance> labelled;
  std::span<const Utterance> unlabelled;
  const std::vector<KdTargetSet> *labelled_targets = nullptr;
  const std::vector<KdTargetSet> *unlabelled_targets = nullptr;
  const std::vector<std::pair<std::string, Hypothesis>> *pseudo = nullptr;
  const std::vector<CollapsedTargetLattice> *collapsed = nullptr;
  const std::vector<OutputLattice> *full = nullptr;
};

/// Teacher lattices against the reference transcripts of `utts`.
std::vector<OutputLattice> TeacherLattices(const TransducerModel &teacher,
                                           std::span<const Utterance> utts);
std::vector<CollapsedTargetLattice> CollapsedTargets(const TransducerModel &teacher,
                                                     std::span<const Utterance> utts);

/// Builds the training items for a job and trains. The model architecture
/// comes from `student`; the job's streaming flag overrides it and streaming
/// students get no lookahead. Full-lattice and collapsed distillation use
/// the labelled split only. A delay on a non-streaming student is allowed
/// (for ablations) but reported on `log`.
TrainOutcome TrainStudent(const StudentJob &job, const ModelConfig &student,
                          const StudentData &data, std::span<const Utterance> dev,
                          const ScheduleConfig &schedule, uint64_t seed,
                          std::ostream *log = nullptr);

struct ExperimentConfig {
  /// The default desk-scale setup.
  ExperimentConfig();

  SynthConfig synth;
  ModelConfig teacher;
  ModelConfig student;
  ScheduleConfig teacher_schedule;
  ScheduleConfig student_schedule;
  /// ST2 fine-tuning after initialisation.
  ScheduleConfig finetune_schedule;
  /// Schedules for runs that include the unlabelled split.
  ScheduleConfig unlabelled_schedule;
  ScheduleConfig unlabelled_finetune_schedule;
  KdConfig kd;
  LmConfig lm;
  /// Beam for pseudo transcription and final scoring.
  int32_t beam = 4;
  /// Candidate LM weights. With more than one, each seed keeps the weight
  /// whose fused teacher decoding has the lowest dev WER.
  std::vector<double> fusion_betas{0.1, 0.2, 0.3, 0.5};
  std::vector<uint64_t> seeds{1, 2, 3};
  /// Empty selects {0, f-2, f, f+2} for f frames per token.
  std::vector<int32_t> taus;
  bool run_collapsed = true;
  double collapsed_lambda = 0.001;
  bool run_unlabelled = true;
  bool run_streaming = true;
  bool pseudo_nll = true;

  void Check() const;
  std::vector<int32_t> TauSweep() const;
  nlohmann::json ToJson() const;
  static ExperimentConfig FromJson(const nlohmann::json &j);
  static ExperimentConfig Load(const std::string &path);
  /// Default setup shrunk for quick runs (fewer utterances, seeds, epochs).
  static ExperimentConfig Small();
};

nlohmann::json LmConfigToJson(const LmConfig &c);
LmConfig LmConfigFromJson(const nlohmann::json &j);

struct ResultRow {
  std::string setup;
  std::string label;
  uint64_t seed = 0;
  double dev_wer = 0.0;
  double test_wer = 0.0;
  int32_t best_epoch = 0;
  /// Row (same seed) that WERR is measured against; empty for reference rows.
  std::string baseline_setup;
  std::string baseline;
};

/// Relative WER reduction (base - new) / base; 0 when base is 0.
double Werr(double base, double value);

class ResultsTable {
 public:
  void Add(ResultRow row);
  const std::vector<ResultRow> &Rows() const { return rows_; }
  const ResultRow *Find(const std::string &setup, const std::string &label,
                        uint64_t seed) const;
  /// Mean over seeds of dev (or test) WER for a row label; nullopt if the
  /// label is missing for any of `seeds`.
  std::optional<double> MeanDev(const std::string &setup, const std::string &label,
                                std::span<const uint64_t> seeds) const;
  std::optional<double> MeanTest(const std::string &setup, const std::string &label,
                                 std::span<const uint64_t> seeds) const;
  /// CSV with one row per (setup, label, seed) and a WERR column computed on
  /// test WER against the named baseline row.
  void WriteCsv(std::ostream &os) const;
  static ResultsTable ReadCsv(std::istream &is);
  /// Seed-averaged text table grouped by setup.
  void Render(std::ostream &os) const;

 private:
  std::vector<ResultRow> rows_;
};

// Row labels used by the harness and the trend checks.
namespace rows {
inline constexpr const char *kLabelled = "labelled";
inline constexpr const char *kUnlabelled = "labelled+unlabelled";
inline constexpr const char *kStreaming = "streaming";
inline constexpr const char *kStreamingUnlabelled = "streaming, labelled+unlabelled";
inline constexpr const char *kTeacher = "teacher";
inline constexpr const char *kBaseline = "baseline";
inline constexpr const char *kContinued = "lambda=0, continued";
inline constexpr const char *kCollapsed = "lambda=0.001, collapsed";
inline constexpr const char *kCollapsedSt2 = "lambda=0.001, collapsed, ST2";
inline constexpr const char *kSt1 = "lambda=0.1, ST1";
inline constexpr const char *kSt2 = "lambda=0.1, ST2";
inline constexpr const char *kSt2Lm = "lambda=0.1, ST2 [+LM]";
inline constexpr const char *kPseudo = "lambda=0.0";
inline constexpr const char *kPseudoLm = "lambda=0.0 [+LM]";
std::string TauLabel(int32_t tau);
}  // namespace rows

struct SeedSummary {
  uint64_t seed = 0;
  size_t teacher_params = 0;
  size_t student_params = 0;
  /// Mean frame lag of the best streaming student behind the non-streaming
  /// ST2 student, over dev utterances where both decode the same labels.
  std::optional<double> emission_lag;
  int32_t lag_utterances = 0;
  /// LM weight used for the [+LM] rows.
  double fusion_beta = 0.0;
};

/*
  Runs the full pipeline for one seed and appends its rows to `table`.
  Checkpoints, target caches, pseudo transcriptions and the LM are written
  under `dir` so that repeated runs can be compared byte for byte.
*/
SeedSummary RunSeed(const ExperimentConfig &config, uint64_t seed,
                    const std::string &dir, ResultsTable *table,
                    std::ostream *log = nullptr);

struct ExperimentResult {
  ResultsTable table;
  std::vector<SeedSummary> seeds;
};

/// All seeds; writes results.csv and results.txt into `dir`.
ExperimentResult RunExperiment(const ExperimentConfig &config, const std::string &dir,
                               std::ostream *log = nullptr);

struct TrendCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// The Table 3/4 and fusion trends evaluated on a finished results table.
std::vector<TrendCheck> CheckTableTrends(const ExperimentConfig &config,
                                         const ResultsTable &table);
std::vector<TrendCheck> CheckStreamingTrends(const ExperimentConfig &config,
                                             const ResultsTable &table);
std::vector<TrendCheck> CheckFusionTrends(const ExperimentConfig &config,
                                          const ResultsTable &table);

// Complexity benchmark.
struct BenchRow {
  std::string variant;
  int32_t frames = 0;
  int32_t labels = 0;
  int32_t vocab = 0;
  int64_t stored_values = 0;
  int64_t expected_values = 0;
  double seconds = 0.0;
};

struct BenchShape {
  int32_t frames;
  int32_t labels;
  int32_t vocab;
};

/// Default (T, U, K) grid: T and U scale together, K varies separately.
std::vector<BenchShape> DefaultBenchGrid();
/// Measures stored target values and loss+gradient time per variant.
std::vector<BenchRow> RunComplexityBench(std::span<const BenchShape> grid,
                                         std::span<const KdVariant> variants,
                                         int32_t repeats, uint64_t seed);
void WriteBenchCsv(std::ostream &os, std::span<const BenchRow> rows);
/// Least-squares slope of log(y) against log(x).
double LogLogSlope(std::span<const double> x, std::span<const double> y);

}  // namespace tdkd

#endif  // TDKD_EXPERIMENT_H_

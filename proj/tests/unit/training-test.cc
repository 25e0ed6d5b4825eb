// tests/unit/training-test.cc

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

#include "tdkd/training.h"

#include <gtest/gtest.h>

#include <sstream>

#include "tdkd/errors.h"
#include "tdkd/experiment.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {
namespace {

SynthConfig TinySynth(double noise = 1.0) {
  SynthConfig s;
  s.n_labelled = 24;
  s.n_unlabelled = 16;
  s.n_dev = 10;
  s.n_test = 10;
  s.n_lm_text = 100;
  s.noise = noise;
  s.seed = 5;
  return s;
}

ModelConfig TinyModel(bool streaming = false) {
  ModelConfig m;
  m.encoder_hidden = 6;
  m.pred_embed = 4;
  m.pred_hidden = 6;
  m.joint_hidden = 6;
  m.streaming = streaming;
  return m;
}

ScheduleConfig TinySchedule(int32_t epochs = 2) {
  ScheduleConfig s;
  s.epochs = epochs;
  s.learning_rate = 0.1;
  return s;
}

std::vector<TrainingItem> LabelledItems(const std::vector<Utterance> &utts) {
  std::vector<TrainingItem> items;
  for (const Utterance &u : utts) items.push_back({&u, *u.tokens, true});
  return items;
}

std::string Bytes(const TransducerModel &m) {
  std::ostringstream os;
  WriteModel(os, m);
  return os.str();
}

class TrainingTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { data_ = new Dataset(GenerateDataset(TinySynth())); }
  static void TearDownTestSuite() { delete data_; }
  static Dataset *data_;
};
Dataset *TrainingTest::data_ = nullptr;

TEST_F(TrainingTest, SameSeedGivesIdenticalCheckpoints) {
  auto items = LabelledItems(data_->labelled);
  KdConfig kd;
  kd.lambda = 0.0;
  auto a = TrainTransducer(TransducerModel(TinyModel(), 3), items, data_->dev,
                           TinySchedule(), kd, 9);
  auto b = TrainTransducer(TransducerModel(TinyModel(), 3), items, data_->dev,
                           TinySchedule(), kd, 9);
  EXPECT_EQ(Bytes(a.model), Bytes(b.model));
  ASSERT_EQ(a.epochs.size(), 2u);
  EXPECT_EQ(a.epochs[1].train_loss, b.epochs[1].train_loss);
  auto c = TrainTransducer(TransducerModel(TinyModel(), 3), items, data_->dev,
                           TinySchedule(), kd, 10);
  EXPECT_NE(Bytes(a.model), Bytes(c.model));
}

TEST_F(TrainingTest, ZeroLambdaStudentMatchesBaselineTrainerBitForBit) {
  TargetOptions o;
  TransducerModel teacher(TinyModel(), 1);
  auto targets = MakeTargets(teacher, data_->labelled, o).targets;
  StudentData sd;
  sd.labelled = data_->labelled;
  sd.labelled_targets = &targets;

  KdConfig no_kd;
  no_kd.lambda = 0.0;
  auto items = LabelledItems(data_->labelled);
  auto baseline = TrainTransducer(TransducerModel(TinyModel(), 4), items, data_->dev,
                                  TinySchedule(), no_kd, 4);

  StudentJob job;
  job.strategy = Strategy::kSt1;
  job.kd.lambda = 0.0;
  auto student = TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(), 4);
  EXPECT_EQ(Bytes(student.model), Bytes(baseline.model));

  job.strategy = Strategy::kBaseline;
  job.kd.lambda = 0.1;  // forced to zero by the strategy
  auto forced = TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(), 4);
  EXPECT_EQ(Bytes(forced.model), Bytes(baseline.model));

  job.strategy = Strategy::kSt1;
  auto kd = TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(), 4);
  EXPECT_NE(Bytes(kd.model), Bytes(baseline.model));
}

TEST_F(TrainingTest, StrategyRules) {
  StudentJob job;
  job.strategy = Strategy::kPseudoOnly;
  job.kd.lambda = 0.5;
  StudentJob n = job.Normalized();
  EXPECT_EQ(n.kd.lambda, 0.0);
  EXPECT_TRUE(n.use_unlabelled);

  job.strategy = Strategy::kSt2;
  EXPECT_THROW(job.Normalized(), ConfigError);
  TransducerModel init(TinyModel(), 1);
  job.init = &init;
  EXPECT_NO_THROW(job.Normalized());

  job.strategy = Strategy::kBaseline;
  job.use_unlabelled = true;
  EXPECT_THROW(job.Normalized(), ConfigError);

  EXPECT_EQ(ParseStrategy("pseudo_only"), Strategy::kPseudoOnly);
  EXPECT_EQ(std::string(StrategyName(ParseStrategy("st2"))), "st2");
  EXPECT_THROW(ParseStrategy("st3"), ConfigError);
}

TEST_F(TrainingTest, StudentInputErrors) {
  StudentData sd;
  sd.labelled = data_->labelled;
  StudentJob job;
  job.strategy = Strategy::kSt1;
  job.kd.lambda = 0.1;
  // One-best KD without targets.
  EXPECT_THROW(TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(1), 1),
               ConfigError);
  // ST2 from a model with a different architecture.
  TransducerModel other(TinyModel(true), 1);
  job.strategy = Strategy::kSt2;
  job.kd.lambda = 0.0;
  job.init = &other;
  EXPECT_THROW(TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(1), 1),
               ConfigError);
  // Pseudo-only needs pseudo transcriptions.
  job = StudentJob();
  job.strategy = Strategy::kPseudoOnly;
  sd.unlabelled = data_->unlabelled;
  EXPECT_THROW(TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(1), 1),
               ConfigError);
}

TEST_F(TrainingTest, St2StartsFromInitialModel) {
  TransducerModel init(TinyModel(), 8);
  StudentData sd;
  sd.labelled = data_->labelled;
  StudentJob job;
  job.strategy = Strategy::kSt2;
  job.kd.lambda = 0.0;
  job.init = &init;
  auto a = TrainStudent(job, TinyModel(), sd, data_->dev, TinySchedule(1), 2);
  auto items = LabelledItems(data_->labelled);
  KdConfig no_kd;
  no_kd.lambda = 0.0;
  auto b = TrainTransducer(init, items, data_->dev, TinySchedule(1), no_kd, 2);
  EXPECT_EQ(Bytes(a.model), Bytes(b.model));
}

TEST_F(TrainingTest, TargetsCoverSplitAndCountValues) {
  TransducerModel teacher(TinyModel(), 2);
  TargetOptions o;
  auto lab = MakeTargets(teacher, data_->labelled, o);
  ASSERT_EQ(lab.targets.size(), data_->labelled.size());
  EXPECT_TRUE(lab.pseudo.empty());
  for (size_t i = 0; i < lab.targets.size(); ++i) {
    const KdTargetSet &t = lab.targets[i];
    EXPECT_EQ(t.id, data_->labelled[i].id);
    int64_t T = data_->labelled[i].features.rows();
    int64_t U = static_cast<int64_t>(data_->labelled[i].tokens->size());
    EXPECT_EQ(t.StoredValueCount(), 12 * (T + U));
    EXPECT_EQ(AlignmentTokens(t.alignment), *data_->labelled[i].tokens);
  }
  auto unl = MakeTargets(teacher, data_->unlabelled, o);
  ASSERT_EQ(unl.pseudo.size(), data_->unlabelled.size());
  for (size_t i = 0; i < unl.targets.size(); ++i)
    EXPECT_EQ(AlignmentTokens(unl.targets[i].alignment), unl.pseudo[i].second.tokens);
}

TEST_F(TrainingTest, ZeroBetaFusionIsByteIdentical) {
  TransducerModel teacher(TinyModel(), 2);
  NgramLm lm = NgramLm::Train(data_->lm_text, 2, 1.0, 12);
  TargetOptions plain;
  TargetOptions fused = plain;
  fused.lm = &lm;
  fused.fuse = true;
  fused.beta = 0.0;
  for (const auto *split : {&data_->labelled, &data_->unlabelled}) {
    auto a = MakeTargets(teacher, *split, plain);
    auto b = MakeTargets(teacher, *split, fused);
    ASSERT_EQ(a.targets.size(), b.targets.size());
    for (size_t i = 0; i < a.targets.size(); ++i)
      EXPECT_EQ(a.targets[i].node_log_probs, b.targets[i].node_log_probs);
    for (size_t i = 0; i < a.pseudo.size(); ++i)
      EXPECT_EQ(a.pseudo[i].second.tokens, b.pseudo[i].second.tokens);
  }
  fused.lm = nullptr;
  EXPECT_THROW(MakeTargets(teacher, data_->labelled, fused), ConfigError);
}

TEST_F(TrainingTest, EvaluateNeedsReferences) {
  TransducerModel m(TinyModel(), 1);
  References refs;
  EXPECT_THROW(Evaluate(m, data_->dev, refs, EvalOptions()), FormatError);
  for (const Utterance &u : data_->dev) refs[u.id] = *u.tokens;
  std::vector<std::pair<std::string, Hypothesis>> hyps;
  WerReport r = Evaluate(m, data_->dev, refs, EvalOptions(), &hyps);
  EXPECT_EQ(hyps.size(), data_->dev.size());
  EXPECT_DOUBLE_EQ(r.wer, GreedyWer(m, data_->dev));
}

TEST_F(TrainingTest, ScheduleValidation) {
  ScheduleConfig s;
  s.epochs = 0;
  EXPECT_THROW(s.Check(), ConfigError);
  s = ScheduleConfig();
  s.lr_decay = 0.0;
  EXPECT_THROW(s.Check(), ConfigError);
  s = ScheduleConfig();
  s.batch_size = 3;
  ScheduleConfig back = ScheduleConfig::FromJson(s.ToJson());
  EXPECT_EQ(back.batch_size, 3);
  KdConfig kd;
  std::vector<TrainingItem> none;
  EXPECT_THROW(TrainTransducer(TransducerModel(TinyModel(), 1), none, {}, s, kd, 1),
               ConfigError);
}

// A noiseless corpus is learnable almost perfectly by the default teacher.
TEST(TeacherSmoke, NoiselessTaskReachesLowWer) {
  ExperimentConfig c;
  SynthConfig s = c.synth;
  s.noise = 0.0;
  s.jitter = false;
  s.n_dev = 50;
  Dataset d = GenerateDataset(s);
  auto items = LabelledItems(d.labelled);
  KdConfig kd;
  kd.lambda = 0.0;
  auto out = TrainTransducer(TransducerModel(c.teacher, 1), items, d.dev,
                             c.teacher_schedule, kd, 1);
  EXPECT_LT(out.best_dev_wer, 0.02);
}

// Widening the beam never lowers the best hypothesis score on a trained
// model.
TEST(BeamWidth, BestScoreGrowsWithBeamOnTrainedModel) {
  Dataset d = GenerateDataset(TinySynth());
  auto items = LabelledItems(d.labelled);
  KdConfig kd;
  kd.lambda = 0.0;
  auto out = TrainTransducer(TransducerModel(TinyModel(), 1), items, d.dev,
                             TinySchedule(15), kd, 1);
  for (const Utterance &u : d.dev) {
    ModelScorer scorer(out.model, u.features);
    double prev = -std::numeric_limits<double>::infinity();
    for (int32_t b : {1, 2, 4, 8}) {
      BeamOptions o;
      o.beam = b;
      double best = BeamDecode(scorer, o).front().score;
      EXPECT_GE(best, prev - 1e-9) << u.id << " beam " << b;
      prev = best;
    }
  }
}

}  // namespace
}  // namespace tdkd

// tests/unit/corpus-test.cc

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

#include "tdkd/corpus.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tdkd/errors.h"

namespace tdkd {
namespace {

namespace fs = std::filesystem;

SynthConfig SmallSynth() {
  SynthConfig c;
  c.vocab_size = 5;
  c.n_labelled = 6;
  c.n_unlabelled = 9;
  c.n_dev = 4;
  c.n_test = 3;
  c.n_lm_text = 20;
  c.seed = 17;
  return c;
}

fs::path TempDir(const std::string &name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

bool SameUtterances(const std::vector<Utterance> &a, const std::vector<Utterance> &b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].tokens != b[i].tokens) return false;
    if (a[i].features.rows() != b[i].features.rows() ||
        a[i].features.cols() != b[i].features.cols())
      return false;
    if (std::memcmp(a[i].features.data(), b[i].features.data(),
                    sizeof(double) * a[i].features.size()) != 0)
      return false;
  }
  return true;
}

TEST(GenerateDataset, SeededRunsAreIdentical) {
  Dataset a = GenerateDataset(SmallSynth()), b = GenerateDataset(SmallSynth());
  for (Split s : {Split::kLabelled, Split::kUnlabelled, Split::kDev, Split::kTest})
    EXPECT_TRUE(SameUtterances(a.Get(s), b.Get(s)));
  EXPECT_EQ(a.lm_text, b.lm_text);
  EXPECT_EQ(a.sealed_unlabelled, b.sealed_unlabelled);
  SynthConfig other = SmallSynth();
  other.seed = 18;
  EXPECT_FALSE(SameUtterances(a.labelled, GenerateDataset(other).labelled));
}

TEST(GenerateDataset, ShapesAndSplits) {
  SynthConfig c = SmallSynth();
  Dataset d = GenerateDataset(c);
  EXPECT_EQ(d.labelled.size(), 6u);
  EXPECT_EQ(d.unlabelled.size(), 9u);
  EXPECT_EQ(d.dev.size(), 4u);
  EXPECT_EQ(d.test.size(), 3u);
  EXPECT_EQ(d.lm_text.size(), 20u);
  std::set<std::string> ids;
  for (Split s : {Split::kLabelled, Split::kUnlabelled, Split::kDev, Split::kTest})
    for (const Utterance &u : d.Get(s)) {
      EXPECT_TRUE(ids.insert(u.id).second) << u.id;
      EXPECT_EQ(u.features.cols(), c.feature_dim);
      const TokenSeq &y = u.tokens ? *u.tokens : d.sealed_unlabelled.at(u.id);
      EXPECT_GE(static_cast<int32_t>(y.size()), c.min_tokens);
      EXPECT_LE(static_cast<int32_t>(y.size()), c.max_tokens);
      int32_t U = static_cast<int32_t>(y.size());
      EXPECT_GE(u.features.rows(), (c.frames_per_token - 1) * U);
      EXPECT_LE(u.features.rows(), (c.frames_per_token + 1) * U);
      for (int32_t k : y) {
        EXPECT_GT(k, 0);
        EXPECT_LT(k, c.vocab_size);
      }
    }
  for (const Utterance &u : d.unlabelled) EXPECT_FALSE(u.tokens.has_value());
}

TEST(GenerateDataset, NoiselessFramesAreClassMeans) {
  SynthConfig c = SmallSynth();
  c.noise = 0.0;
  c.jitter = false;
  Dataset d = GenerateDataset(c);
  for (int i = 0; i < d.class_means.rows(); ++i)
    for (int j = i + 1; j < d.class_means.rows(); ++j)
      EXPECT_GT((d.class_means.row(i) - d.class_means.row(j)).norm(), 0.0);
  for (const Utterance &u : d.labelled) {
    ASSERT_EQ(u.features.rows(), c.frames_per_token * static_cast<int64_t>(u.tokens->size()));
    for (size_t i = 0; i < u.tokens->size(); ++i)
      for (int r = 0; r < c.frames_per_token; ++r)
        EXPECT_EQ((u.features.row(i * c.frames_per_token + r) -
                   d.class_means.row((*u.tokens)[i] - 1))
                      .norm(),
                  0.0);
  }
}

TEST(GenerateDataset, ZipfPriorFavoursLowIds) {
  SynthConfig c = SmallSynth();
  c.vocab_size = 8;
  c.n_lm_text = 3000;
  Dataset d = GenerateDataset(c);
  std::vector<int> counts(8, 0);
  for (const TokenSeq &s : d.lm_text)
    for (int32_t k : s) ++counts[k];
  EXPECT_GT(counts[1], counts[2]);
  EXPECT_GT(counts[2], counts[4]);
  EXPECT_GT(counts[4], counts[7]);
}

TEST(GenerateDataset, ContextWeightMakesSuccessorsPredictable) {
  SynthConfig c = SmallSynth();
  c.vocab_size = 6;
  c.min_tokens = 3;
  c.n_lm_text = 2000;
  c.context_weight = 1.0;
  c.context_order = 2;
  c.context_exponent = 30.0;
  Dataset d = GenerateDataset(c);
  // With a very steep successor prior the two preceding tokens fix the next.
  std::map<std::pair<int32_t, int32_t>, std::set<int32_t>> next;
  for (const TokenSeq &s : d.lm_text)
    for (size_t i = 2; i < s.size(); ++i) next[{s[i - 2], s[i - 1]}].insert(s[i]);
  ASSERT_FALSE(next.empty());
  for (const auto &[ctx, followers] : next) EXPECT_EQ(followers.size(), 1u);

  c.context_weight = 0.0;
  Dataset iid = GenerateDataset(c);
  size_t branching = 0;
  next.clear();
  for (const TokenSeq &s : iid.lm_text)
    for (size_t i = 2; i < s.size(); ++i) next[{s[i - 2], s[i - 1]}].insert(s[i]);
  for (const auto &[ctx, followers] : next) branching += followers.size() > 1;
  EXPECT_GT(branching, 0u);
}

TEST(SaveDataset, RoundTripIsExact) {
  SynthConfig c = SmallSynth();
  Dataset d = GenerateDataset(c);
  fs::path dir = TempDir("tdkd-corpus-test");
  SaveDataset(dir.string(), c, d);
  for (Split s : {Split::kLabelled, Split::kUnlabelled, Split::kDev, Split::kTest})
    EXPECT_TRUE(SameUtterances(LoadSplit(dir.string(), s), d.Get(s))) << SplitName(s);
  EXPECT_EQ(LoadReferences(dir.string(), Split::kUnlabelled), d.sealed_unlabelled);
  References dev = LoadReferences(dir.string(), Split::kDev);
  for (const Utterance &u : d.dev) EXPECT_EQ(dev.at(u.id), *u.tokens);
  EXPECT_EQ(LoadLmText(dir.string()), d.lm_text);
  EXPECT_EQ(LoadSynthConfig(dir.string()).ToJson(), c.ToJson());

  // The unlabelled manifest and features carry no transcript at all.
  std::ifstream manifest(dir / "unlabelled.json");
  std::stringstream text;
  text << manifest.rdbuf();
  EXPECT_EQ(text.str().find("tokens"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "unlabelled.jsonl"));
  fs::remove_all(dir);
}

TEST(SaveDataset, CorruptFilesAreRejected) {
  SynthConfig c = SmallSynth();
  Dataset d = GenerateDataset(c);
  fs::path dir = TempDir("tdkd-corpus-bad");
  SaveDataset(dir.string(), c, d);
  {
    std::ofstream f(dir / "dev.feat", std::ios::binary | std::ios::trunc);
    f << "FEAX";
  }
  EXPECT_THROW(LoadSplit(dir.string(), Split::kDev), FormatError);
  {
    std::ofstream f(dir / "test.json", std::ios::trunc);
    f << "{\"version\": 99}";
  }
  EXPECT_THROW(LoadSplit(dir.string(), Split::kTest), FormatError);
  EXPECT_THROW(LoadSplit((dir / "missing").string(), Split::kTest), FormatError);
  fs::remove_all(dir);
}

TEST(SynthConfig, Validation) {
  SynthConfig c = SmallSynth();
  c.min_tokens = 5;
  c.max_tokens = 4;
  EXPECT_THROW(c.Check(), ConfigError);
  c = SmallSynth();
  c.noise = -1.0;
  EXPECT_THROW(c.Check(), ConfigError);
  c = SmallSynth();
  c.context_weight = 1.5;
  EXPECT_THROW(c.Check(), ConfigError);
  c = SmallSynth();
  c.context_order = 0;
  EXPECT_THROW(c.Check(), ConfigError);
  EXPECT_EQ(ParseSplit("dev"), Split::kDev);
  EXPECT_THROW(ParseSplit("train"), ConfigError);
}

}  // namespace
}  // namespace tdkd

// core/src/corpus.cc

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

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "tdkd/binary-io.h"
#include "tdkd/decoding.h"
#include "tdkd/errors.h"

namespace tdkd {

namespace fs = std::filesystem;

void SynthConfig::Check() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (frames_per_token < 1) throw ConfigError("frames_per_token must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (min_tokens < 0 || min_tokens > max_tokens)
    throw ConfigError("need 0 <= min_tokens <= max_tokens");
  if (n_labelled < 0 || n_unlabelled < 0 || n_dev < 0 || n_test < 0 ||
      n_lm_text < 0)
    throw ConfigError("split sizes must be >= 0");
  if (!(zipf_exponent >= 0.0)) throw ConfigError("zipf_exponent must be >= 0");
  if (!(context_weight >= 0.0 && context_weight <= 1.0))
    throw ConfigError("context_weight must be in [0, 1]");
  if (!(context_exponent >= 0.0)) throw ConfigError("context_exponent must be >= 0");
  if (context_order < 1 || context_order > 3)
    throw ConfigError("context_order must be in [1, 3]");
}

nlohmann::json SynthConfig::ToJson() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["feature_dim"] = feature_dim;
  j["frames_per_token"] = frames_per_token;
  j["noise"] = noise;
  j["jitter"] = jitter;
  j["min_tokens"] = min_tokens;
  j["max_tokens"] = max_tokens;
  j["zipf_exponent"] = zipf_exponent;
  j["context_weight"] = context_weight;
  j["context_order"] = context_order;
  j["context_exponent"] = context_exponent;
  j["n_labelled"] = n_labelled;
  j["n_unlabelled"] = n_unlabelled;
  j["n_dev"] = n_dev;
  j["n_test"] = n_test;
  j["n_lm_text"] = n_lm_text;
  j["seed"] = seed;
  return nlohmann::json(j);
}

SynthConfig SynthConfig::FromJson(const nlohmann::json &j) {
  SynthConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.frames_per_token = j.value("frames_per_token", c.frames_per_token);
  c.noise = j.value("noise", c.noise);
  c.jitter = j.value("jitter", c.jitter);
  c.min_tokens = j.value("min_tokens", c.min_tokens);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
  c.context_weight = j.value("context_weight", c.context_weight);
  c.context_order = j.value("context_order", c.context_order);
  c.context_exponent = j.value("context_exponent", c.context_exponent);
  c.n_labelled = j.value("n_labelled", c.n_labelled);
  c.n_unlabelled = j.value("n_unlabelled", c.n_unlabelled);
  c.n_dev = j.value("n_dev", c.n_dev);
  c.n_test = j.value("n_test", c.n_test);
  c.n_lm_text = j.value("n_lm_text", c.n_lm_text);
  c.seed = j.value("seed", c.seed);
  c.Check();
  return c;
}

const char *SplitName(Split split) {
  switch (split) {
    case Split::kLabelled: return "labelled";
    case Split::kUnlabelled: return "unlabelled";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split ParseSplit(const std::string &name) {
  for (Split s : {Split::kLabelled, Split::kUnlabelled, Split::kDev, Split::kTest})
    if (name == SplitName(s)) return s;
  throw ConfigError("unknown split '" + name + "'");
}

const std::vector<Utterance> &Dataset::Get(Split split) const {
  switch (split) {
    case Split::kLabelled: return labelled;
    case Split::kUnlabelled: return unlabelled;
    case Split::kDev: return dev;
    case Split::kTest: return test;
  }
  throw ContractViolation("bad split");
}

namespace {

std::mt19937_64 StreamRng(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream)};
  return std::mt19937_64(seq);
}

class SplitSampler {
 public:
  SplitSampler(const SynthConfig &c, const Eigen::MatrixXd &means,
               const std::vector<std::vector<int32_t>> &successors, uint64_t stream)
      : c_(c), means_(means), successors_(successors),
        rng_(StreamRng(c.seed, stream)) {
    token_dist_ = ZipfRanks(c.vocab_size - 1, c.zipf_exponent);
    successor_dist_ = ZipfRanks(c.vocab_size - 1, c.context_exponent);
  }

  TokenSeq SampleTokens() {
    std::uniform_int_distribution<int32_t> len(c_.min_tokens, c_.max_tokens);
    TokenSeq y(len(rng_));
    std::bernoulli_distribution use_context(c_.context_weight);
    for (size_t i = 0; i < y.size(); ++i) {
      if (i > 0 && c_.context_weight > 0.0 && use_context(rng_))
        y[i] = successors_[ContextIndex(y, i)][successor_dist_(rng_)] + 1;
      else
        y[i] = token_dist_(rng_) + 1;
    }
    return y;
  }

  FeatureMatrix Render(const TokenSeq &y) {
    std::vector<int32_t> runs;
    std::uniform_int_distribution<int32_t> jitter(-1, 1);
    int32_t total = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      int32_t n = c_.frames_per_token;
      if (c_.jitter) n = std::max(1, n + jitter(rng_));
      runs.push_back(n);
      total += n;
    }
    // An empty transcript still gets one frame of pure noise.
    FeatureMatrix x = FeatureMatrix::Zero(std::max(total, 1), c_.feature_dim);
    int32_t t = 0;
    for (size_t i = 0; i < y.size(); ++i)
      for (int32_t r = 0; r < runs[i]; ++r, ++t)
        x.row(t) = means_.row(y[i] - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    if (c_.noise > 0.0)
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += c_.noise * noise(rng_);
    return x;
  }

 private:
  const SynthConfig &c_;
  const Eigen::MatrixXd &means_;
  const std::vector<std::vector<int32_t>> &successors_;
  std::mt19937_64 rng_;
  std::discrete_distribution<int32_t> token_dist_;
  std::discrete_distribution<int32_t> successor_dist_;

  // Positions before the start of the sequence count as token 0.
  size_t ContextIndex(const TokenSeq &y, size_t i) const {
    size_t index = 0;
    for (int32_t j = 1; j <= c_.context_order; ++j) {
      int32_t prev = i >= static_cast<size_t>(j) ? y[i - j] : 0;
      index = index * c_.vocab_size + prev;
    }
    return index;
  }

  static std::discrete_distribution<int32_t> ZipfRanks(int32_t n, double exponent) {
    std::vector<double> weights;
    for (int32_t rank = 1; rank <= n; ++rank)
      weights.push_back(1.0 / std::pow(static_cast<double>(rank), exponent));
    return std::discrete_distribution<int32_t>(weights.begin(), weights.end());
  }
};

std::string MakeId(const char *prefix, int32_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05d", prefix, i);
  return buf;
}

void Populate(const SynthConfig &c, const Eigen::MatrixXd &means,
              const std::vector<std::vector<int32_t>> &successors, uint64_t stream,
              const char *prefix, int32_t n, bool labelled,
              std::vector<Utterance> &out, References *sealed) {
  SplitSampler sampler(c, means, successors, stream);
  for (int32_t i = 0; i < n; ++i) {
    Utterance u;
    u.id = MakeId(prefix, i);
    TokenSeq y = sampler.SampleTokens();
    u.features = sampler.Render(y);
    if (labelled) {
      u.tokens = std::move(y);
    } else {
      (*sealed)[u.id] = std::move(y);
    }
    out.push_back(std::move(u));
  }
}

}  // namespace

Dataset GenerateDataset(const SynthConfig &c) {
  c.Check();
  Dataset data;
  std::mt19937_64 rng = StreamRng(c.seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  data.class_means.resize(c.vocab_size - 1, c.feature_dim);
  for (Eigen::Index i = 0; i < data.class_means.size(); ++i)
    data.class_means.data()[i] = normal(rng);

  // Per context, the order in which successors take the Zipf ranks.
  size_t num_contexts = 1;
  for (int32_t j = 0; j < c.context_order; ++j) num_contexts *= c.vocab_size;
  std::vector<std::vector<int32_t>> successors(num_contexts);
  for (std::vector<int32_t> &order : successors) {
    order.resize(c.vocab_size - 1);
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
  }
  const auto &means = data.class_means;
  Populate(c, means, successors, 1, "lab", c.n_labelled, true, data.labelled, nullptr);
  Populate(c, means, successors, 2, "unl", c.n_unlabelled, false, data.unlabelled,
           &data.sealed_unlabelled);
  Populate(c, means, successors, 3, "dev", c.n_dev, true, data.dev, nullptr);
  Populate(c, means, successors, 4, "tst", c.n_test, true, data.test, nullptr);
  SplitSampler text(c, data.class_means, successors, 5);
  for (int32_t i = 0; i < c.n_lm_text; ++i) data.lm_text.push_back(text.SampleTokens());
  return data;
}

void WriteTranscripts(const std::string &path,
                      const std::vector<std::pair<std::string, TokenSeq>> &rows) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  for (const auto &[id, tokens] : rows) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["tokens"] = tokens;
    j["text"] = TokensToText(tokens);
    os << j.dump() << '\n';
  }
}

std::vector<std::pair<std::string, TokenSeq>> ReadTranscripts(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open transcripts " + path);
  std::vector<std::pair<std::string, TokenSeq>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      rows.emplace_back(j.at("id").get<std::string>(), j.at("tokens").get<TokenSeq>());
    } catch (const nlohmann::json::exception &e) {
      throw FormatError("bad transcript line in " + path + ": " + e.what());
    }
  }
  return rows;
}

void SaveDataset(const std::string &dir, const SynthConfig &config,
                 const Dataset &data) {
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "synth.json");
    os << config.ToJson().dump(2) << '\n';
  }
  for (Split split : {Split::kLabelled, Split::kUnlabelled, Split::kDev, Split::kTest}) {
    const std::string name = SplitName(split);
    const auto &utts = data.Get(split);
    std::ofstream feat(fs::path(dir) / (name + ".feat"), std::ios::binary);
    if (!feat) throw FormatError("cannot write features in " + dir);
    nlohmann::ordered_json manifest;
    manifest["version"] = kDatasetFormatVersion;
    manifest["split"] = name;
    manifest["features"] = name + ".feat";
    manifest["transcripts"] =
        split == Split::kUnlabelled ? nlohmann::ordered_json(nullptr)
                                    : nlohmann::ordered_json(name + ".jsonl");
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    std::vector<std::pair<std::string, TokenSeq>> transcripts;
    uint64_t offset = 0;
    for (const Utterance &u : utts) {
      nlohmann::ordered_json e;
      e["id"] = u.id;
      e["offset"] = offset;
      e["frames"] = u.features.rows();
      e["dim"] = u.features.cols();
      entries.push_back(std::move(e));
      WriteMagic(feat, "FEAT");
      WriteU32(feat, static_cast<uint32_t>(u.features.rows()));
      WriteU32(feat, static_cast<uint32_t>(u.features.cols()));
      WriteF64Array(feat, {u.features.data(), static_cast<size_t>(u.features.size())});
      offset += 12 + 8 * static_cast<uint64_t>(u.features.size());
      if (split != Split::kUnlabelled) transcripts.emplace_back(u.id, *u.tokens);
    }
    manifest["utterances"] = std::move(entries);
    std::ofstream man(fs::path(dir) / (name + ".json"));
    man << manifest.dump(1) << '\n';
    if (split == Split::kUnlabelled) {
      std::vector<std::pair<std::string, TokenSeq>> sealed(
          data.sealed_unlabelled.begin(), data.sealed_unlabelled.end());
      WriteTranscripts((fs::path(dir) / "unlabelled.sealed.jsonl").string(), sealed);
    } else {
      WriteTranscripts((fs::path(dir) / (name + ".jsonl")).string(), transcripts);
    }
  }
  std::vector<std::pair<std::string, TokenSeq>> text;
  for (size_t i = 0; i < data.lm_text.size(); ++i)
    text.emplace_back(MakeId("txt", static_cast<int32_t>(i)), data.lm_text[i]);
  WriteTranscripts((fs::path(dir) / "lm_text.jsonl").string(), text);
}

std::vector<Utterance> LoadSplit(const std::string &dir, Split split) {
  const std::string name = SplitName(split);
  std::ifstream man(fs::path(dir) / (name + ".json"));
  if (!man) throw FormatError("missing manifest for split " + name + " in " + dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(man);
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("bad manifest: " + std::string(e.what()));
  }
  if (manifest.value("version", 0u) != kDatasetFormatVersion)
    throw FormatError("dataset version mismatch in " + name + ".json");

  std::ifstream feat(fs::path(dir) / manifest.at("features").get<std::string>(),
                     std::ios::binary);
  if (!feat) throw FormatError("missing feature file for split " + name);

  std::map<std::string, TokenSeq> transcripts;
  if (split != Split::kUnlabelled && !manifest.at("transcripts").is_null()) {
    for (auto &[id, tokens] :
         ReadTranscripts((fs::path(dir) / manifest.at("transcripts").get<std::string>())
                             .string()))
      transcripts[id] = std::move(tokens);
  }

  std::vector<Utterance> out;
  for (const auto &e : manifest.at("utterances")) {
    Utterance u;
    u.id = e.at("id").get<std::string>();
    feat.seekg(static_cast<std::streamoff>(e.at("offset").get<uint64_t>()));
    ExpectMagic(feat, "FEAT");
    uint32_t T = ReadU32(feat), d = ReadU32(feat);
    if (T != e.at("frames").get<uint32_t>() || d != e.at("dim").get<uint32_t>())
      throw FormatError("feature header disagrees with manifest for " + u.id);
    u.features.resize(T, d);
    ReadF64Array(feat, {u.features.data(), static_cast<size_t>(u.features.size())});
    if (split != Split::kUnlabelled) {
      auto it = transcripts.find(u.id);
      if (it == transcripts.end()) throw FormatError("no transcript for " + u.id);
      u.tokens = it->second;
    }
    out.push_back(std::move(u));
  }
  return out;
}

References LoadReferences(const std::string &dir, Split split) {
  std::string file = split == Split::kUnlabelled
                         ? "unlabelled.sealed.jsonl"
                         : std::string(SplitName(split)) + ".jsonl";
  fs::path path = fs::path(dir) / file;
  if (!fs::exists(path)) throw FormatError("missing references " + path.string());
  References refs;
  for (auto &[id, tokens] : ReadTranscripts(path.string())) refs[id] = std::move(tokens);
  return refs;
}

std::vector<TokenSeq> LoadLmText(const std::string &dir) {
  std::vector<TokenSeq> out;
  for (auto &[id, tokens] : ReadTranscripts((fs::path(dir) / "lm_text.jsonl").string()))
    out.push_back(std::move(tokens));
  return out;
}

SynthConfig LoadSynthConfig(const std::string &dir) {
  std::ifstream is(fs::path(dir) / "synth.json");
  if (!is) throw FormatError("missing synth.json in " + dir);
  return SynthConfig::FromJson(nlohmann::json::parse(is));
}

}  // namespace tdkd

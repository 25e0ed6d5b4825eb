// core/src/decoding.cc

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

#include "tdkd/decoding.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "json.hpp"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"

namespace tdkd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

ModelScorer::ModelScorer(const TransducerModel &model,
                         const FeatureMatrix &features)
    : model_(model), num_frames_(static_cast<int32_t>(features.rows())) {
  const auto &layout = model.GetLayout();
  joint_enc_ = model.Mat(layout.joint_enc) * EncodeFeatures(model, features);
}

std::vector<double> ModelScorer::StateFromInput(const VectorXd &embedding,
                                                const VectorXd &prev_g) const {
  const auto &layout = model_.GetLayout();
  VectorXd g = (model_.Mat(layout.pred_w_in) * embedding +
                model_.Mat(layout.pred_w_rec) * prev_g + model_.Vec(layout.pred_bias))
                   .array()
                   .tanh();
  VectorXd b = model_.Mat(layout.joint_pred) * g + model_.Vec(layout.joint_bias);
  std::vector<double> state(g.size() + b.size());
  std::copy(g.data(), g.data() + g.size(), state.begin());
  std::copy(b.data(), b.data() + b.size(), state.begin() + g.size());
  return state;
}

std::vector<double> ModelScorer::InitialState() const {
  const auto &c = model_.Config();
  return StateFromInput(model_.Mat(model_.GetLayout().embed).col(kBlankId),
                        VectorXd::Zero(c.pred_hidden));
}

std::vector<double> ModelScorer::NextState(const std::vector<double> &state,
                                           int32_t token) const {
  const auto &c = model_.Config();
  Eigen::Map<const VectorXd> prev_g(state.data(), c.pred_hidden);
  return StateFromInput(model_.Mat(model_.GetLayout().embed).col(token), prev_g);
}

void ModelScorer::FrameLogProbs(int32_t t, const std::vector<double> &state,
                                std::span<double> out) const {
  const auto &c = model_.Config();
  const auto &layout = model_.GetLayout();
  Eigen::Map<const VectorXd> b(state.data() + c.pred_hidden, c.joint_hidden);
  VectorXd h = (joint_enc_.col(t) + b).array().tanh();
  Eigen::Map<VectorXd> z(out.data(), c.vocab_size);
  z.noalias() = model_.Mat(layout.out_w) * h;
  z += model_.Vec(layout.out_bias);
  LogSoftmaxInPlace(out);
}

void LatticeScorer::FrameLogProbs(int32_t t, const std::vector<double> &state,
                                  std::span<double> out) const {
  auto u = static_cast<int32_t>(state[0]);
  if (u <= lattice_.NumLabels()) {
    auto node = lattice_.Node(t, u);
    std::copy(node.begin(), node.end(), out.begin());
  } else {
    std::fill(out.begin(), out.end(), kLogZero);
    out[kBlankId] = 0.0;
  }
}

Hypothesis GreedyDecode(const TransducerScorer &scorer,
                        int32_t max_symbols_per_frame) {
  Hypothesis hyp;
  std::vector<double> state = scorer.InitialState();
  std::vector<double> lp(scorer.VocabSize());
  for (int32_t t = 0; t < scorer.NumFrames(); ++t) {
    for (int32_t n = 0;; ++n) {
      scorer.FrameLogProbs(t, state, lp);
      auto best = static_cast<int32_t>(
          std::max_element(lp.begin(), lp.end()) - lp.begin());
      if (best == kBlankId || n == max_symbols_per_frame) {
        hyp.score += lp[kBlankId];
        break;
      }
      hyp.score += lp[best];
      hyp.tokens.push_back(best);
      hyp.emission_frames.push_back(t);
      state = scorer.NextState(state, best);
    }
  }
  return hyp;
}

namespace {

struct BeamHyp {
  Hypothesis hyp;
  std::vector<double> state;
};

struct Proposal {
  size_t source;
  int32_t symbol;
  double score;
};

void MergeInto(std::map<TokenSeq, BeamHyp> &pool, BeamHyp &&h) {
  auto it = pool.find(h.hyp.tokens);
  if (it == pool.end()) {
    TokenSeq key = h.hyp.tokens;
    pool.emplace(std::move(key), std::move(h));
    return;
  }
  Hypothesis &cur = it->second.hyp;
  double merged = LogAdd(cur.score, h.hyp.score);
  // Emission times follow the stronger contribution.
  if (h.hyp.score > cur.score) cur.emission_frames = h.hyp.emission_frames;
  cur.score = merged;
}

// Top-n of the pool by score; ties keep the map's lexicographic order.
std::vector<BeamHyp> Prune(std::map<TokenSeq, BeamHyp> &&pool, size_t n) {
  std::vector<BeamHyp> out;
  out.reserve(pool.size());
  for (auto &kv : pool) out.push_back(std::move(kv.second));
  std::stable_sort(out.begin(), out.end(), [](const BeamHyp &a, const BeamHyp &b) {
    return a.hyp.score > b.hyp.score;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

}  // namespace

std::vector<Hypothesis> BeamDecode(const TransducerScorer &scorer,
                                   const BeamOptions &options) {
  Require(options.beam >= 1, "beam width must be >= 1");
  Require(options.lm_weight >= 0.0, "LM weight must be non-negative");
  const int32_t K = scorer.VocabSize();
  const bool fuse = options.lm != nullptr && options.lm_weight != 0.0;
  if (fuse) Require(options.lm->VocabSize() == K, "LM vocabulary mismatch");
  const size_t beam = static_cast<size_t>(options.beam);

  std::vector<BeamHyp> hyps(1);
  hyps[0].state = scorer.InitialState();
  std::vector<double> lp(K), lm, fused(K - 1);

  for (int32_t t = 0; t < scorer.NumFrames(); ++t) {
    std::map<TokenSeq, BeamHyp> ended;
    std::vector<BeamHyp> active = std::move(hyps);
    for (int32_t step = 0; !active.empty(); ++step) {
      std::vector<Proposal> proposals;
      for (size_t i = 0; i < active.size(); ++i) {
        const BeamHyp &h = active[i];
        scorer.FrameLogProbs(t, h.state, lp);
        // With fusion each symbol is scored by the renormalised fused
        // distribution whose blank entry follows the emitted symbol: LM score
        // 0 when blank is emitted, the smallest label score otherwise.
        double blank_norm = 0.0, label_norm = 0.0;
        if (fuse) {
          lm = options.lm->StepDist(h.hyp.tokens);
          double min_label = kLogZero;
          for (int32_t k = 1; k < K; ++k) {
            fused[k - 1] = lp[k] + options.lm_weight * lm[k];
            min_label = k == 1 ? lm[k] : std::min(min_label, lm[k]);
          }
          double labels = LogSumExp(fused);
          blank_norm = LogAdd(lp[kBlankId], labels);
          label_norm = LogAdd(lp[kBlankId] + options.lm_weight * min_label, labels);
        }
        double blank = h.hyp.score + lp[kBlankId] - blank_norm;
        if (blank != kLogZero) proposals.push_back({i, kBlankId, blank});
        if (step == options.max_symbols_per_frame) continue;
        for (int32_t k = 1; k < K; ++k) {
          double s = fuse ? h.hyp.score + fused[k - 1] - label_norm
                          : h.hyp.score + lp[k];
          if (s != kLogZero) proposals.push_back({i, k, s});
        }
      }
      std::stable_sort(proposals.begin(), proposals.end(),
                       [](const Proposal &a, const Proposal &b) {
                         return a.score > b.score;
                       });
      if (proposals.size() > beam) proposals.resize(beam);

      std::vector<BeamHyp> next_active;
      for (const Proposal &p : proposals) {
        const BeamHyp &src = active[p.source];
        BeamHyp h;
        h.hyp = src.hyp;
        h.hyp.score = p.score;
        if (p.symbol == kBlankId) {
          h.state = src.state;
          MergeInto(ended, std::move(h));
        } else {
          h.hyp.tokens.push_back(p.symbol);
          h.hyp.emission_frames.push_back(t);
          h.state = scorer.NextState(src.state, p.symbol);
          next_active.push_back(std::move(h));
        }
      }
      active = std::move(next_active);
    }
    hyps = Prune(std::move(ended), beam);
  }

  std::vector<Hypothesis> out;
  out.reserve(hyps.size());
  for (BeamHyp &h : hyps) out.push_back(std::move(h.hyp));
  return out;
}

WerReport &WerReport::operator+=(const WerReport &o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_words += o.ref_words;
  infinite = ref_words == 0 && Errors() > 0;
  wer = ref_words > 0 ? static_cast<double>(Errors()) / ref_words
                      : (infinite ? std::numeric_limits<double>::infinity() : 0.0);
  return *this;
}

namespace {

template <typename T>
WerReport LevenshteinWer(std::span<const T> ref, std::span<const T> hyp) {
  const size_t n = ref.size(), m = hyp.size();
  std::vector<int64_t> d((n + 1) * (m + 1));
  auto at = [&](size_t i, size_t j) -> int64_t & { return d[i * (m + 1) + j]; };
  for (size_t i = 0; i <= n; ++i) at(i, 0) = static_cast<int64_t>(i);
  for (size_t j = 0; j <= m; ++j) at(0, j) = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i)
    for (size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1),
                           at(i, j - 1) + 1, at(i - 1, j) + 1});

  WerReport r;
  r.ref_words = static_cast<int64_t>(n);
  size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      int64_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      if (diag == at(i, j)) {
        if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j - 1) + 1 == at(i, j)) {
      ++r.insertions;
      --j;
    } else {
      ++r.deletions;
      --i;
    }
  }
  r.infinite = n == 0 && m > 0;
  r.wer = n > 0 ? static_cast<double>(r.Errors()) / n
                : (r.infinite ? std::numeric_limits<double>::infinity() : 0.0);
  return r;
}

}  // namespace

WerReport ComputeWer(std::span<const std::string> ref,
                     std::span<const std::string> hyp) {
  return LevenshteinWer(ref, hyp);
}

WerReport ComputeWer(std::span<const int32_t> ref, std::span<const int32_t> hyp) {
  return LevenshteinWer(ref, hyp);
}

double EmissionLag(const Hypothesis &streaming, const Hypothesis &non_streaming) {
  Require(streaming.tokens == non_streaming.tokens,
          "emission lag needs identical label sequences");
  Require(streaming.emission_frames.size() == streaming.tokens.size() &&
              non_streaming.emission_frames.size() == non_streaming.tokens.size(),
          "hypothesis is missing emission frames");
  if (streaming.tokens.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < streaming.tokens.size(); ++i)
    sum += streaming.emission_frames[i] - non_streaming.emission_frames[i];
  return sum / static_cast<double>(streaming.tokens.size());
}

std::string TokenWord(int32_t k) { return "w" + std::to_string(k); }

std::string TokensToText(std::span<const int32_t> tokens) {
  std::string text;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) text += ' ';
    text += TokenWord(tokens[i]);
  }
  return text;
}

std::string HypothesisToJsonLine(const std::string &id, const Hypothesis &hyp) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["tokens"] = hyp.tokens;
  j["text"] = TokensToText(hyp.tokens);
  if (std::isfinite(hyp.score)) {
    j["score"] = hyp.score;
  } else {
    j["score"] = nullptr;
  }
  j["frames"] = hyp.emission_frames;
  return j.dump();
}

std::pair<std::string, Hypothesis> HypothesisFromJsonLine(const std::string &line) {
  try {
    auto j = nlohmann::json::parse(line);
    Hypothesis h;
    h.tokens = j.at("tokens").get<TokenSeq>();
    h.score = j.at("score").is_null() ? kLogZero : j.at("score").get<double>();
    h.emission_frames = j.at("frames").get<std::vector<int32_t>>();
    if (h.emission_frames.size() != h.tokens.size())
      throw FormatError("hypothesis frames and tokens differ in length");
    return {j.at("id").get<std::string>(), std::move(h)};
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad hypothesis line: ") + e.what());
  }
}

}  // namespace tdkd

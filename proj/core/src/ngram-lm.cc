// core/src/ngram-lm.cc

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

#include "tdkd/ngram-lm.h"

#include <cmath>
#include <fstream>

#include "tdkd/errors.h"

namespace tdkd {

NgramLm NgramLm::Train(std::span<const TokenSeq> corpus, int32_t order,
                       double alpha, int32_t vocab_size) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("smoothing constant must be > 0");
  if (vocab_size < 2) throw ConfigError("vocabulary needs at least one label");
  NgramLm lm;
  lm.order_ = order;
  lm.alpha_ = alpha;
  lm.vocab_size_ = vocab_size;

  int64_t num_tokens = 0;
  for (const TokenSeq &sentence : corpus) {
    CheckTokenSeq(sentence, vocab_size);
    for (size_t i = 0; i < sentence.size(); ++i) {
      for (int32_t m = 0; m < order && static_cast<size_t>(m) <= i; ++m) {
        TokenSeq ctx(sentence.begin() + (i - m), sentence.begin() + i);
        ContextCounts &cc = lm.contexts_[ctx];
        if (cc.next.empty()) cc.next.assign(vocab_size, 0);
        ++cc.next[sentence[i]];
        ++cc.total;
      }
      ++num_tokens;
    }
  }
  if (num_tokens == 0) throw ConfigError("cannot train an LM on an empty corpus");
  return lm;
}

const NgramLm::ContextCounts &NgramLm::FindContext(
    std::span<const int32_t> history) const {
  size_t len = std::min<size_t>(history.size(), order_ - 1);
  for (;; --len) {
    TokenSeq ctx(history.end() - len, history.end());
    auto it = contexts_.find(ctx);
    if (it != contexts_.end() && it->second.total > 0) return it->second;
    if (len == 0) break;
  }
  throw ContractViolation("language model has no unigram counts");
}

std::vector<double> NgramLm::StepDist(std::span<const int32_t> history) const {
  const ContextCounts &cc = FindContext(history);
  std::vector<double> out(vocab_size_);
  out[kBlankId] = kLmBlankSentinel;
  double denom = std::log(cc.total + alpha_ * (vocab_size_ - 1));
  for (int32_t k = 1; k < vocab_size_; ++k)
    out[k] = std::log(cc.next[k] + alpha_) - denom;
  return out;
}

double NgramLm::LogProb(std::span<const int32_t> history, int32_t token) const {
  Require(token > 0 && token < vocab_size_, "LM query for invalid token");
  const ContextCounts &cc = FindContext(history);
  return std::log(cc.next[token] + alpha_) -
         std::log(cc.total + alpha_ * (vocab_size_ - 1));
}

nlohmann::json NgramLm::ToJson() const {
  nlohmann::ordered_json j;
  j["order"] = order_;
  j["alpha"] = alpha_;
  j["vocab_size"] = vocab_size_;
  nlohmann::ordered_json counts = nlohmann::ordered_json::array();
  for (const auto &[ctx, cc] : contexts_) {
    nlohmann::ordered_json entry;
    entry["context"] = ctx;
    entry["next"] = cc.next;
    counts.push_back(std::move(entry));
  }
  j["contexts"] = std::move(counts);
  return nlohmann::json(j);
}

NgramLm NgramLm::FromJson(const nlohmann::json &j) {
  NgramLm lm;
  try {
    lm.order_ = j.at("order").get<int32_t>();
    lm.alpha_ = j.at("alpha").get<double>();
    lm.vocab_size_ = j.at("vocab_size").get<int32_t>();
    for (const auto &entry : j.at("contexts")) {
      ContextCounts cc;
      cc.next = entry.at("next").get<std::vector<int64_t>>();
      if (cc.next.size() != static_cast<size_t>(lm.vocab_size_))
        throw FormatError("LM count row has wrong size");
      for (int64_t c : cc.next) cc.total += c;
      lm.contexts_[entry.at("context").get<TokenSeq>()] = std::move(cc);
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad LM file: ") + e.what());
  }
  if (lm.order_ < 1 || !(lm.alpha_ > 0.0) || lm.vocab_size_ < 2 ||
      !lm.contexts_.count(TokenSeq{}))
    throw FormatError("LM file is missing required fields");
  return lm;
}

void NgramLm::Save(const std::string &path) const {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << ToJson().dump() << '\n';
}

NgramLm NgramLm::Load(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open LM file " + path);
  try {
    return FromJson(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad LM file: ") + e.what());
  }
}

}  // namespace tdkd

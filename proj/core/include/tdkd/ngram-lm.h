// tdkd/ngram-lm.h

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

#ifndef TDKD_NGRAM_LM_H_
#define TDKD_NGRAM_LM_H_

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdkd/lattice.h"

namespace tdkd {

/// Value left in the blank slot of StepDist(). Consumers fill it according
/// to the emission context before use.
inline constexpr double kLmBlankSentinel = std::numeric_limits<double>::quiet_NaN();

/*
  Add-alpha smoothed n-gram model over the non-blank labels 1..K-1.

  p(w | h) = (c(h, w) + alpha) / (c(h) + alpha * (K - 1)) for the longest
  suffix h of the history (at most n-1 tokens) that was seen as a context in
  training; shorter suffixes are tried when it was not. The empty context is
  the unigram model. No sentence boundary symbols are used.
*/
class NgramLm {
 public:
  static NgramLm Train(std::span<const TokenSeq> corpus, int32_t order,
                       double alpha, int32_t vocab_size);

  int32_t Order() const { return order_; }
  double Alpha() const { return alpha_; }
  int32_t VocabSize() const { return vocab_size_; }

  /// K log-probs; entry 0 holds kLmBlankSentinel.
  std::vector<double> StepDist(std::span<const int32_t> history) const;
  double LogProb(std::span<const int32_t> history, int32_t token) const;

  nlohmann::json ToJson() const;
  static NgramLm FromJson(const nlohmann::json &j);
  void Save(const std::string &path) const;
  static NgramLm Load(const std::string &path);

  bool operator==(const NgramLm &) const = default;

 private:
  struct ContextCounts {
    std::vector<int64_t> next;  // indexed by token id, size K
    int64_t total = 0;
    bool operator==(const ContextCounts &) const = default;
  };
  const ContextCounts &FindContext(std::span<const int32_t> history) const;

  int32_t order_ = 2;
  double alpha_ = 1.0;
  int32_t vocab_size_ = 0;
  std::map<TokenSeq, ContextCounts> contexts_;
};

}  // namespace tdkd

#endif  // TDKD_NGRAM_LM_H_

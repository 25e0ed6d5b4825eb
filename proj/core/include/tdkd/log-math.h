// tdkd/log-math.h

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

#ifndef TDKD_LOG_MATH_H_
#define TDKD_LOG_MATH_H_

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "tdkd/errors.h"

namespace tdkd {

/// log(0). Exact zero probabilities are represented by -infinity everywhere.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// log(exp(a) + exp(b)).
inline double LogAdd(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

/// Max-shifted log(sum(exp(xs))). Returns kLogZero if every entry is kLogZero.
inline double LogSumExp(std::span<const double> xs) {
  Require(!xs.empty(), "LogSumExp of an empty list");
  double max = *std::max_element(xs.begin(), xs.end());
  if (max == kLogZero) return kLogZero;
  if (std::isinf(max)) return max;  // +inf dominates
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - max);
  return max + std::log(sum);
}

/// In-place log-softmax. The input may contain -inf but not only -inf.
inline void LogSoftmaxInPlace(std::span<double> xs) {
  double norm = LogSumExp(xs);
  for (double &x : xs) x -= norm;
}

}  // namespace tdkd

#endif  // TDKD_LOG_MATH_H_

// core/src/kd-losses.cc

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

#include "tdkd/kd-losses.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {

namespace {

// -sum_k P(k) log Q(k); terms with P(k) = 0 contribute nothing.
double NodeCrossEntropy(std::span<const double> target_log_probs,
                        std::span<const double> student_log_probs) {
  double ce = 0.0;
  for (size_t k = 0; k < target_log_probs.size(); ++k) {
    if (target_log_probs[k] == kLogZero) continue;
    ce -= std::exp(target_log_probs[k]) * student_log_probs[k];
  }
  return ce;
}

// d CE / d logits = softmax(student) - target.
void AddNodeCrossEntropyGrad(std::span<const double> target_log_probs,
                             std::span<const double> student_log_probs,
                             std::span<double> grad) {
  double target_mass = 0.0;
  for (double lp : target_log_probs) target_mass += std::exp(lp);
  for (size_t k = 0; k < grad.size(); ++k)
    grad[k] += target_mass * std::exp(student_log_probs[k]) -
               std::exp(target_log_probs[k]);
}

void CheckSameShape(const OutputLattice &a, const OutputLattice &b) {
  Require(a.SameShape(b), "teacher and student lattices differ in shape");
}

void CheckTargetFits(const KdTargetSet &target, const OutputLattice &student) {
  Require(target.vocab_size == student.VocabSize(),
          "target vocabulary differs from student lattice");
  CheckAlignmentShape(target.alignment, student.NumFrames(),
                      student.NumLabels());
  Require(target.node_log_probs.size() ==
              target.alignment.steps.size() * target.vocab_size,
          "target distribution count does not match alignment");
}

struct CollapsedStudent {
  // log q_blank, log q_correct (kLogZero when no correct label), log q_rest
  std::array<double, 3> log_q;
};

CollapsedStudent CollapseStudentNode(std::span<const double> log_probs,
                                     std::optional<int32_t> correct) {
  CollapsedStudent out;
  out.log_q[0] = log_probs[kBlankId];
  out.log_q[1] = correct ? log_probs[*correct] : kLogZero;
  double rest = kLogZero;
  for (size_t k = 0; k < log_probs.size(); ++k) {
    if (static_cast<int32_t>(k) == kBlankId) continue;
    if (correct && static_cast<int32_t>(k) == *correct) continue;
    rest = LogAdd(rest, log_probs[k]);
  }
  out.log_q[2] = rest;
  return out;
}

std::optional<int32_t> CorrectLabel(std::span<const int32_t> tokens, int32_t u) {
  if (static_cast<size_t>(u) < tokens.size()) return tokens[u];
  return std::nullopt;
}

void CheckCollapsedInputs(const CollapsedTargetLattice &teacher,
                          const OutputLattice &student,
                          std::span<const int32_t> tokens) {
  Require(teacher.NumFrames() == student.NumFrames() &&
              teacher.NumLabels() == student.NumLabels(),
          "collapsed target shape differs from student lattice");
  Require(tokens.size() == static_cast<size_t>(student.NumLabels()),
          "label count does not match lattice U");
  CheckTokenSeq(tokens, student.VocabSize());
}

}  // namespace

const char *KdVariantName(KdVariant v) {
  switch (v) {
    case KdVariant::kFullLattice: return "full";
    case KdVariant::kCollapsed: return "collapsed";
    case KdVariant::kOneBest: return "onebest";
  }
  return "?";
}

KdVariant ParseKdVariant(const std::string &name) {
  if (name == "full") return KdVariant::kFullLattice;
  if (name == "collapsed") return KdVariant::kCollapsed;
  if (name == "onebest") return KdVariant::kOneBest;
  throw ConfigError("unknown KD variant '" + name + "'");
}

void KdConfig::Check() const {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (tau < 0) throw ConfigError("tau must be >= 0");
  if (!(beta_lm >= 0.0)) throw ConfigError("LM weight must be >= 0");
}

int32_t KdTargetSet::NumFrames() const {
  return static_cast<int32_t>(std::count_if(
      alignment.steps.begin(), alignment.steps.end(),
      [](const AlignmentStep &s) { return s.k == kBlankId; }));
}

int32_t KdTargetSet::NumLabels() const {
  return static_cast<int32_t>(alignment.steps.size()) - NumFrames();
}

KdTargetSet MakeOneBestTargets(const std::string &id,
                               const OutputLattice &teacher,
                               std::span<const int32_t> tokens) {
  ViterbiResult best = ViterbiAlignment(teacher, tokens);
  KdTargetSet target;
  target.id = id;
  target.vocab_size = teacher.VocabSize();
  target.node_log_probs.reserve(best.alignment.steps.size() *
                                teacher.VocabSize());
  for (const AlignmentStep &s : best.alignment.steps) {
    auto node = teacher.Node(s.t, s.u);
    target.node_log_probs.insert(target.node_log_probs.end(), node.begin(),
                                 node.end());
  }
  target.alignment = std::move(best.alignment);
  return target;
}

CollapsedTargetLattice::CollapsedTargetLattice(int32_t num_frames,
                                               int32_t num_labels)
    : num_frames_(num_frames), num_labels_(num_labels),
      probs_(static_cast<size_t>(num_frames) * (num_labels + 1),
             std::array<double, 3>{0.0, 0.0, 0.0}) {}

std::array<double, 3> CollapseNode(std::span<const double> probs,
                                   std::optional<int32_t> correct) {
  Require(probs.size() >= 2, "distribution needs at least two symbols");
  if (correct) {
    Require(*correct != kBlankId, "correct symbol cannot be blank");
    Require(*correct > 0 && static_cast<size_t>(*correct) < probs.size(),
            "correct symbol out of range");
  }
  double p_blank = probs[kBlankId];
  double p_correct = correct ? probs[*correct] : 0.0;
  double p_rest = std::max(0.0, 1.0 - p_blank - p_correct);
  return {p_blank, p_correct, p_rest};
}

CollapsedTargetLattice CollapseLattice(const OutputLattice &teacher,
                                       std::span<const int32_t> tokens) {
  Require(tokens.size() == static_cast<size_t>(teacher.NumLabels()),
          "label count does not match lattice U");
  CheckTokenSeq(tokens, teacher.VocabSize());
  CollapsedTargetLattice out(teacher.NumFrames(), teacher.NumLabels());
  std::vector<double> probs(teacher.VocabSize());
  for (int32_t t = 0; t < teacher.NumFrames(); ++t) {
    for (int32_t u = 0; u <= teacher.NumLabels(); ++u) {
      auto node = teacher.Node(t, u);
      for (size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(node[k]);
      out.At(t, u) = CollapseNode(probs, CorrectLabel(tokens, u));
    }
  }
  return out;
}

double KdFullLattice(const OutputLattice &teacher, const OutputLattice &student) {
  CheckSameShape(teacher, student);
  double loss = 0.0;
  for (int32_t t = 0; t < teacher.NumFrames(); ++t)
    for (int32_t u = 0; u <= teacher.NumLabels(); ++u)
      loss += NodeCrossEntropy(teacher.Node(t, u), student.Node(t, u));
  return loss;
}

LatticeGradient KdFullLatticeGrad(const OutputLattice &teacher,
                                  const OutputLattice &student) {
  CheckSameShape(teacher, student);
  LatticeGradient grad(student.NumFrames(), student.NumLabels(),
                       student.VocabSize());
  for (int32_t t = 0; t < teacher.NumFrames(); ++t)
    for (int32_t u = 0; u <= teacher.NumLabels(); ++u)
      AddNodeCrossEntropyGrad(teacher.Node(t, u), student.Node(t, u),
                              grad.Node(t, u));
  return grad;
}

double KlFullLattice(const OutputLattice &teacher, const OutputLattice &student) {
  double entropy = 0.0;
  for (int32_t t = 0; t < teacher.NumFrames(); ++t)
    for (int32_t u = 0; u <= teacher.NumLabels(); ++u)
      entropy += NodeCrossEntropy(teacher.Node(t, u), teacher.Node(t, u));
  return KdFullLattice(teacher, student) - entropy;
}

double KdCollapsed(const CollapsedTargetLattice &teacher,
                   const OutputLattice &student,
                   std::span<const int32_t> tokens) {
  CheckCollapsedInputs(teacher, student, tokens);
  double loss = 0.0;
  for (int32_t t = 0; t < student.NumFrames(); ++t) {
    for (int32_t u = 0; u <= student.NumLabels(); ++u) {
      const auto &p = teacher.At(t, u);
      CollapsedStudent q =
          CollapseStudentNode(student.Node(t, u), CorrectLabel(tokens, u));
      for (int c = 0; c < 3; ++c)
        if (p[c] > 0.0) loss -= p[c] * q.log_q[c];
    }
  }
  return loss;
}

LatticeGradient KdCollapsedGrad(const CollapsedTargetLattice &teacher,
                                const OutputLattice &student,
                                std::span<const int32_t> tokens) {
  CheckCollapsedInputs(teacher, student, tokens);
  const int32_t K = student.VocabSize();
  LatticeGradient grad(student.NumFrames(), student.NumLabels(), K);
  // With p_j = softmax(z)_j and P the collapsed target:
  //   dCE/dz_j = p_j * sum(P) - P_blank [j = blank] - P_correct [j = correct]
  //              - P_rest * p_j / q_rest [j in rest]
  for (int32_t t = 0; t < student.NumFrames(); ++t) {
    for (int32_t u = 0; u <= student.NumLabels(); ++u) {
      const auto &p = teacher.At(t, u);
      std::optional<int32_t> correct = CorrectLabel(tokens, u);
      auto node = student.Node(t, u);
      CollapsedStudent q = CollapseStudentNode(node, correct);
      double mass = p[0] + p[1] + p[2];
      auto g = grad.Node(t, u);
      for (int32_t k = 0; k < K; ++k) {
        double pk = std::exp(node[k]);
        double gk = pk * mass;
        if (k == kBlankId) {
          gk -= p[0];
        } else if (correct && k == *correct) {
          gk -= p[1];
        } else if (p[2] > 0.0) {
          gk -= p[2] * std::exp(node[k] - q.log_q[2]);
        }
        g[k] = gk;
      }
    }
  }
  return grad;
}

double KdOneBest(const KdTargetSet &target, const OutputLattice &student,
                 int32_t tau) {
  Require(tau >= 0, "tau must be non-negative");
  CheckTargetFits(target, student);
  double loss = 0.0;
  const auto &steps = target.alignment.steps;
  for (size_t i = 0; i < steps.size(); ++i) {
    int32_t t = steps[i].t + tau;
    if (t >= student.NumFrames()) continue;
    loss += NodeCrossEntropy(target.NodeDist(i), student.Node(t, steps[i].u));
  }
  return loss;
}

LatticeGradient KdOneBestGrad(const KdTargetSet &target,
                              const OutputLattice &student, int32_t tau) {
  Require(tau >= 0, "tau must be non-negative");
  CheckTargetFits(target, student);
  LatticeGradient grad(student.NumFrames(), student.NumLabels(),
                       student.VocabSize());
  const auto &steps = target.alignment.steps;
  for (size_t i = 0; i < steps.size(); ++i) {
    int32_t t = steps[i].t + tau;
    if (t >= student.NumFrames()) continue;
    AddNodeCrossEntropyGrad(target.NodeDist(i), student.Node(t, steps[i].u),
                            grad.Node(t, steps[i].u));
  }
  return grad;
}

KdTargetSet FuseTargets(const KdTargetSet &target,
                        std::span<const std::vector<double>> lm_log_probs,
                        double beta) {
  Require(beta >= 0.0, "LM weight must be non-negative");
  Require(lm_log_probs.size() == target.alignment.steps.size(),
          "one LM distribution per target node is required");
  KdTargetSet out = target;
  out.fused = true;
  out.beta = beta;
  // beta = 0 keeps the teacher distributions bit-for-bit.
  if (beta == 0.0) return out;

  const int32_t K = target.vocab_size;
  std::vector<double> lm(K);
  for (size_t i = 0; i < lm_log_probs.size(); ++i) {
    const std::vector<double> &step_lm = lm_log_probs[i];
    Require(step_lm.size() == static_cast<size_t>(K),
            "LM distribution has wrong size");
    double min_label = *std::min_element(step_lm.begin() + 1, step_lm.end());
    std::copy(step_lm.begin(), step_lm.end(), lm.begin());
    lm[kBlankId] =
        target.alignment.steps[i].k == kBlankId ? 0.0 : min_label;
    auto dist = out.NodeDist(i);
    for (int32_t k = 0; k < K; ++k) dist[k] += beta * lm[k];
    LogSoftmaxInPlace(dist);
  }
  return out;
}

double CombinedLoss(double nll, double kd, double lambda) {
  Require(lambda >= 0.0, "lambda must be non-negative");
  return nll + lambda * kd;
}

std::string TargetToJsonLine(const KdTargetSet &target) {
  nlohmann::ordered_json j;
  j["id"] = target.id;
  nlohmann::ordered_json align = nlohmann::ordered_json::array();
  for (const AlignmentStep &s : target.alignment.steps)
    align.push_back({s.t, s.u, s.k});
  j["alignment"] = std::move(align);
  nlohmann::ordered_json dists = nlohmann::ordered_json::array();
  for (size_t i = 0; i < target.alignment.steps.size(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (double v : target.NodeDist(i)) {
      if (std::isfinite(v)) {
        row.push_back(v);
      } else {
        row.push_back(nullptr);
      }
    }
    dists.push_back(std::move(row));
  }
  j["dists"] = std::move(dists);
  j["fused"] = target.fused;
  j["beta"] = target.beta;
  return j.dump();
}

KdTargetSet TargetFromJsonLine(const std::string &line) {
  KdTargetSet target;
  try {
    auto j = nlohmann::json::parse(line);
    target.id = j.at("id").get<std::string>();
    for (const auto &s : j.at("alignment")) {
      if (!s.is_array() || s.size() != 3)
        throw FormatError("alignment step must be [t,u,k]");
      target.alignment.steps.push_back(
          {s[0].get<int32_t>(), s[1].get<int32_t>(), s[2].get<int32_t>()});
    }
    const auto &dists = j.at("dists");
    if (dists.size() != target.alignment.steps.size())
      throw FormatError("dists and alignment lengths differ");
    for (const auto &row : dists) {
      if (target.vocab_size == 0) target.vocab_size = static_cast<int32_t>(row.size());
      if (row.size() != static_cast<size_t>(target.vocab_size))
        throw FormatError("ragged dists rows");
      for (const auto &v : row)
        target.node_log_probs.push_back(v.is_null() ? kLogZero : v.get<double>());
    }
    target.fused = j.at("fused").get<bool>();
    target.beta = j.at("beta").get<double>();
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad target cache line: ") + e.what());
  }
  return target;
}

void WriteTargetCache(std::ostream &os, std::span<const KdTargetSet> targets) {
  for (const KdTargetSet &t : targets) os << TargetToJsonLine(t) << '\n';
  if (!os) throw FormatError("failed writing target cache");
}

std::vector<KdTargetSet> ReadTargetCache(std::istream &is) {
  std::vector<KdTargetSet> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(TargetFromJsonLine(line));
  }
  return out;
}

}  // namespace tdkd

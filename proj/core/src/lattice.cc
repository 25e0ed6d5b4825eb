// core/src/lattice.cc

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

#include "tdkd/lattice.h"

#include <cmath>
#include <sstream>

#include "tdkd/binary-io.h"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"

namespace tdkd {

void CheckTokenSeq(std::span<const int32_t> tokens, int32_t vocab_size) {
  for (int32_t k : tokens) {
    Require(k != kBlankId, "token sequence contains blank");
    Require(k > 0 && k < vocab_size, "token id out of range");
  }
}

Vocab::Vocab(int32_t size) : size_(size) {
  Require(size >= 2, "vocabulary needs blank plus at least one label");
}

NodeArray::NodeArray(int32_t num_frames, int32_t num_labels,
                     int32_t vocab_size, double fill)
    : num_frames_(num_frames), num_labels_(num_labels),
      vocab_size_(vocab_size) {
  Require(num_frames >= 0 && num_labels >= 0, "negative lattice dimension");
  Require(vocab_size >= 2, "vocabulary size must be >= 2");
  data_.assign(static_cast<size_t>(NumNodes()) * vocab_size, fill);
}

std::span<const double> NodeArray::Frame(int32_t t) const {
  size_t n = static_cast<size_t>(num_labels_ + 1) * vocab_size_;
  return {data_.data() + t * n, n};
}

std::span<double> NodeArray::Frame(int32_t t) {
  size_t n = static_cast<size_t>(num_labels_ + 1) * vocab_size_;
  return {data_.data() + t * n, n};
}

void NodeArray::CheckIndex(int32_t t, int32_t u, int32_t k) const {
  Require(t >= 0 && t < num_frames_, "frame index out of range");
  Require(u >= 0 && u <= num_labels_, "label index out of range");
  Require(k >= 0 && k < vocab_size_, "symbol index out of range");
}

OutputLattice OutputLattice::FromLogits(int32_t num_frames, int32_t num_labels,
                                        int32_t vocab_size,
                                        std::span<const double> logits) {
  OutputLattice lat(num_frames, num_labels, vocab_size);
  Require(logits.size() == lat.Data().size(), "logit count mismatch");
  std::copy(logits.begin(), logits.end(), lat.Data().begin());
  for (int32_t t = 0; t < num_frames; ++t)
    for (int32_t u = 0; u <= num_labels; ++u) LogSoftmaxInPlace(lat.Node(t, u));
  return lat;
}

OutputLattice OutputLattice::Uniform(int32_t num_frames, int32_t num_labels,
                                     int32_t vocab_size) {
  return OutputLattice(num_frames, num_labels, vocab_size,
                       -std::log(static_cast<double>(vocab_size)));
}

double NodeLogProb(const OutputLattice &lattice, int32_t t, int32_t u,
                   int32_t k) {
  lattice.CheckIndex(t, u, k);
  return lattice.Node(t, u)[k];
}

LatticeReport ValidateLattice(const OutputLattice &lattice, double tolerance) {
  LatticeReport report;
  for (int32_t t = 0; t < lattice.NumFrames(); ++t) {
    for (int32_t u = 0; u <= lattice.NumLabels(); ++u) {
      auto node = lattice.Node(t, u);
      for (double v : node)
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
          ++report.bad_entries;
      double residual = std::abs(LogSumExp(node));
      // An all -inf node has residual +inf.
      if (std::isnan(residual)) residual = std::numeric_limits<double>::infinity();
      if (report.worst_t < 0 || residual > report.worst_residual) {
        report.worst_residual = residual;
        report.worst_t = t;
        report.worst_u = u;
      }
    }
  }
  report.ok = report.bad_entries == 0 && report.worst_residual <= tolerance;
  if (!report.ok) {
    std::ostringstream msg;
    msg << "lattice not normalized: worst residual " << report.worst_residual
        << " at (t=" << report.worst_t << ", u=" << report.worst_u << ")";
    if (report.bad_entries > 0)
      msg << ", " << report.bad_entries << " NaN/+inf entries";
    report.message = msg.str();
  }
  return report;
}

void CheckAlignmentShape(const Alignment &alignment, int32_t num_frames,
                         int32_t num_labels) {
  Require(num_frames >= 1, "alignment needs at least one frame");
  Require(alignment.steps.size() ==
              static_cast<size_t>(num_frames) + static_cast<size_t>(num_labels),
          "alignment must have T+U steps");
  int32_t t = 0, u = 0;
  for (const AlignmentStep &s : alignment.steps) {
    Require(s.t == t && s.u == u, "alignment is not a connected path");
    if (s.k == kBlankId) {
      ++t;
    } else {
      Require(u < num_labels, "alignment emits too many labels");
      ++u;
    }
  }
  Require(t == num_frames && u == num_labels,
          "alignment does not end at the final node");
}

void CheckAlignment(const Alignment &alignment, int32_t num_frames,
                    std::span<const int32_t> tokens) {
  CheckAlignmentShape(alignment, num_frames,
                      static_cast<int32_t>(tokens.size()));
  for (const AlignmentStep &s : alignment.steps)
    if (s.k != kBlankId) Require(s.k == tokens[s.u], "alignment label mismatch");
}

TokenSeq AlignmentTokens(const Alignment &alignment) {
  TokenSeq out;
  for (const AlignmentStep &s : alignment.steps)
    if (s.k != kBlankId) out.push_back(s.k);
  return out;
}

void WriteLattice(std::ostream &os, const OutputLattice &lattice) {
  WriteMagic(os, "LATT");
  WriteU32(os, kLatticeFormatVersion);
  WriteU32(os, static_cast<uint32_t>(lattice.NumFrames()));
  WriteU32(os, static_cast<uint32_t>(lattice.NumLabels()));
  WriteU32(os, static_cast<uint32_t>(lattice.VocabSize()));
  WriteF64Array(os, lattice.Data());
  if (!os) throw FormatError("failed writing lattice");
}

OutputLattice ReadLattice(std::istream &is) {
  ExpectMagic(is, "LATT");
  uint32_t version = ReadU32(is);
  if (version != kLatticeFormatVersion)
    throw FormatError("unsupported lattice version " + std::to_string(version));
  uint32_t t = ReadU32(is), u = ReadU32(is), k = ReadU32(is);
  if (k < 2 || t > (1u << 24) || u > (1u << 24) || k > (1u << 24))
    throw FormatError("implausible lattice header");
  OutputLattice lat(static_cast<int32_t>(t), static_cast<int32_t>(u),
                    static_cast<int32_t>(k));
  ReadF64Array(is, lat.Data());
  return lat;
}

}  // namespace tdkd

// core/src/training.cc

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

#include <cmath>
#include <numeric>
#include <random>

#include "tdkd/errors.h"
#include "tdkd/parallel.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {

void ScheduleConfig::Check() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

nlohmann::json ScheduleConfig::ToJson() const {
  return {{"epochs", epochs},         {"learning_rate", learning_rate},
          {"lr_decay", lr_decay},     {"clip", clip},
          {"batch_size", batch_size}};
}

ScheduleConfig ScheduleConfig::FromJson(const nlohmann::json &j) {
  ScheduleConfig s;
  s.epochs = j.value("epochs", s.epochs);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.lr_decay = j.value("lr_decay", s.lr_decay);
  s.clip = j.value("clip", s.clip);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.Check();
  return s;
}

namespace {

void AddScaled(NodeArray &dst, const NodeArray &src, double scale) {
  auto d = dst.Data();
  auto s = src.Data();
  for (size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

}  // namespace

double ItemLossAndGradient(const TransducerModel &model, const TrainingItem &item,
                           const KdConfig &kd, std::span<double> grad) {
  Require(item.utt != nullptr, "training item without utterance");
  const bool use_kd = kd.lambda > 0.0;
  if (!item.apply_nll && !use_kd) return 0.0;

  ForwardTape tape;
  OutputLattice lattice = ForwardLattice(model, item.utt->features, item.tokens, &tape);
  LatticeGradient lattice_grad(lattice.NumFrames(), lattice.NumLabels(),
                               lattice.VocabSize());
  double loss = 0.0;
  if (item.apply_nll) {
    TransducerLoss nll = TransducerNll(lattice, item.tokens);
    if (!std::isfinite(nll.loss))
      throw NumericError("non-finite transducer loss on " + item.utt->id);
    loss += nll.loss;
    lattice_grad = TransducerNllGrad(lattice, item.tokens, nll.table);
  }
  if (use_kd) {
    double kd_loss = 0.0;
    switch (kd.variant) {
      case KdVariant::kOneBest:
        Require(item.one_best != nullptr, "one-best KD needs cached targets");
        kd_loss = KdOneBest(*item.one_best, lattice, kd.tau);
        AddScaled(lattice_grad, KdOneBestGrad(*item.one_best, lattice, kd.tau),
                  kd.lambda);
        break;
      case KdVariant::kFullLattice:
        Require(item.full_target != nullptr, "full-lattice KD needs teacher lattices");
        kd_loss = KdFullLattice(*item.full_target, lattice);
        AddScaled(lattice_grad, KdFullLatticeGrad(*item.full_target, lattice),
                  kd.lambda);
        break;
      case KdVariant::kCollapsed:
        Require(item.collapsed_target != nullptr,
                "collapsed KD needs collapsed teacher lattices");
        kd_loss = KdCollapsed(*item.collapsed_target, lattice, item.tokens);
        AddScaled(lattice_grad,
                  KdCollapsedGrad(*item.collapsed_target, lattice, item.tokens),
                  kd.lambda);
        break;
    }
    loss = CombinedLoss(loss, kd_loss, kd.lambda);
  }
  if (!std::isfinite(loss))
    throw NumericError("non-finite training loss on " + item.utt->id);
  Backward(model, tape, lattice_grad, grad);
  return loss;
}

double GreedyWer(const TransducerModel &model, std::span<const Utterance> utts) {
  std::vector<WerReport> reports(utts.size());
  ParallelFor(utts.size(), [&](size_t i) {
    Require(utts[i].tokens.has_value(), "greedy WER needs reference tokens");
    Hypothesis h = GreedyDecode(ModelScorer(model, utts[i].features));
    reports[i] = ComputeWer(*utts[i].tokens, h.tokens);
  });
  WerReport total;
  for (const WerReport &r : reports) total += r;
  return total.wer;
}

TrainOutcome TrainTransducer(TransducerModel init, std::span<const TrainingItem> items,
                             std::span<const Utterance> dev,
                             const ScheduleConfig &schedule, const KdConfig &kd,
                             uint64_t seed, std::ostream *log) {
  schedule.Check();
  kd.Check();
  if (items.empty()) throw ConfigError("no training data");

  TrainOutcome out{init, {}, 0, 0.0};
  TransducerModel model = std::move(init);
  const size_t num_params = model.NumParams();
  std::mt19937_64 rng(seed);
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  double lr = schedule.learning_rate;
  const size_t batch = static_cast<size_t>(schedule.batch_size);
  std::vector<std::vector<double>> grads(batch, std::vector<double>(num_params));
  std::vector<double> losses(batch);
  std::vector<double> total(num_params);

  for (int32_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += batch) {
      size_t n = std::min(batch, order.size() - start);
      ParallelFor(n, [&](size_t i) {
        std::fill(grads[i].begin(), grads[i].end(), 0.0);
        losses[i] = ItemLossAndGradient(model, items[order[start + i]], kd, grads[i]);
      });
      std::fill(total.begin(), total.end(), 0.0);
      double batch_loss = 0.0;
      for (size_t i = 0; i < n; ++i) {
        batch_loss += losses[i];
        for (size_t p = 0; p < num_params; ++p) total[p] += grads[i][p];
      }
      for (double &g : total) g /= static_cast<double>(n);
      if (!std::isfinite(batch_loss))
        throw NumericError("training diverged in epoch " + std::to_string(epoch));
      SgdStep(model, total, lr, schedule.clip);
      epoch_loss += batch_loss;
    }
    lr *= schedule.lr_decay;

    EpochLog entry{epoch, epoch_loss / static_cast<double>(items.size()),
                   dev.empty() ? 0.0 : GreedyWer(model, dev)};
    out.epochs.push_back(entry);
    if (log) {
      *log << "  epoch " << epoch << " loss " << entry.train_loss << " dev WER "
           << entry.dev_wer << '\n';
    }
    if (epoch == 1 || dev.empty() || entry.dev_wer < out.best_dev_wer) {
      out.model = model;
      out.best_epoch = epoch;
      out.best_dev_wer = entry.dev_wer;
    }
  }
  return out;
}

GeneratedTargets MakeTargets(const TransducerModel &teacher,
                             std::span<const Utterance> utts,
                             const TargetOptions &options) {
  if (options.fuse && options.lm == nullptr)
    throw ConfigError("LM fusion requested but no LM was given");
  if (options.beam < 1) throw ConfigError("beam must be >= 1");
  const bool fuse = options.fuse;

  std::vector<KdTargetSet> targets(utts.size());
  std::vector<std::optional<Hypothesis>> pseudo(utts.size());
  ParallelFor(utts.size(), [&](size_t i) {
    const Utterance &utt = utts[i];
    TokenSeq tokens;
    if (utt.tokens) {
      tokens = *utt.tokens;
    } else {
      BeamOptions bo;
      bo.beam = options.beam;
      if (fuse) {
        bo.lm = options.lm;
        bo.lm_weight = options.beta;
      }
      auto hyps = BeamDecode(ModelScorer(teacher, utt.features), bo);
      Hypothesis best = hyps.empty() ? Hypothesis{} : std::move(hyps.front());
      tokens = best.tokens;
      pseudo[i] = std::move(best);
    }
    OutputLattice lattice = ForwardLattice(teacher, utt.features, tokens);
    KdTargetSet target = MakeOneBestTargets(utt.id, lattice, tokens);
    if (fuse) {
      std::vector<std::vector<double>> lm_dists;
      lm_dists.reserve(target.alignment.steps.size());
      for (const AlignmentStep &s : target.alignment.steps)
        lm_dists.push_back(options.lm->StepDist(
            std::span<const int32_t>(tokens.data(), static_cast<size_t>(s.u))));
      target = FuseTargets(target, lm_dists, options.beta);
    }
    targets[i] = std::move(target);
  });

  GeneratedTargets out;
  out.targets = std::move(targets);
  for (size_t i = 0; i < utts.size(); ++i)
    if (pseudo[i]) out.pseudo.emplace_back(utts[i].id, std::move(*pseudo[i]));
  return out;
}

WerReport Evaluate(const TransducerModel &model, std::span<const Utterance> utts,
                   const References &refs, const EvalOptions &options,
                   std::vector<std::pair<std::string, Hypothesis>> *hyps) {
  if (options.beam < 1) throw ConfigError("beam must be >= 1");
  const bool fuse = options.lm != nullptr && options.beta != 0.0;
  std::vector<Hypothesis> best(utts.size());
  std::vector<WerReport> reports(utts.size());
  for (const Utterance &u : utts)
    if (!refs.count(u.id)) throw FormatError("missing reference for " + u.id);
  ParallelFor(utts.size(), [&](size_t i) {
    ModelScorer scorer(model, utts[i].features);
    if (options.beam == 1 && !fuse) {
      best[i] = GreedyDecode(scorer);
    } else {
      BeamOptions bo;
      bo.beam = options.beam;
      bo.lm = options.lm;
      bo.lm_weight = options.beta;
      auto list = BeamDecode(scorer, bo);
      if (!list.empty()) best[i] = std::move(list.front());
    }
    reports[i] = ComputeWer(refs.at(utts[i].id), best[i].tokens);
  });
  WerReport total;
  for (const WerReport &r : reports) total += r;
  if (hyps) {
    hyps->clear();
    for (size_t i = 0; i < utts.size(); ++i) hyps->emplace_back(utts[i].id, best[i]);
  }
  return total;
}

}  // namespace tdkd

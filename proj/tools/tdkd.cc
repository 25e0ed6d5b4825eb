// tools/tdkd.cc

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

// Command-line front end: data generation, teacher and LM training, target
// generation, student training, evaluation, benchmarks and reports.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "tdkd/errors.h"
#include "tdkd/experiment.h"

namespace tdkd {
namespace {

struct Common {
  std::string config_path;
  uint64_t seed = 1;
  bool seed_set = false;

  ExperimentConfig Config() const {
    return config_path.empty() ? ExperimentConfig() : ExperimentConfig::Load(config_path);
  }
};

void AddCommon(CLI::App *cmd, Common *c) {
  cmd->add_option("--config", c->config_path, "Experiment config (JSON)");
  cmd->add_option_function<uint64_t>(
      "--seed", [c](const uint64_t &s) { c->seed = s; c->seed_set = true; },
      "Random seed");
}

// Reorders per-utterance records to follow `utts`; every utterance must be
// covered.
template <typename T, typename IdOf>
std::vector<T> AlignById(std::vector<T> records, std::span<const Utterance> utts,
                         IdOf id_of, const std::string &what) {
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < records.size(); ++i) index[id_of(records[i])] = i;
  std::vector<T> out;
  out.reserve(utts.size());
  for (const Utterance &u : utts) {
    auto it = index.find(u.id);
    if (it == index.end()) throw FormatError(what + " has no entry for " + u.id);
    out.push_back(std::move(records[it->second]));
  }
  return out;
}

std::vector<KdTargetSet> LoadTargets(const std::string &path,
                                     std::span<const Utterance> utts) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  return AlignById(ReadTargetCache(is), utts,
                   [](const KdTargetSet &t) { return t.id; }, path);
}

std::vector<std::pair<std::string, Hypothesis>> ReadHypotheses(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::vector<std::pair<std::string, Hypothesis>> out;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(HypothesisFromJsonLine(line));
  return out;
}

void WriteHypotheses(const std::string &path,
                     const std::vector<std::pair<std::string, Hypothesis>> &hyps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  for (const auto &[id, h] : hyps) os << HypothesisToJsonLine(id, h) << '\n';
}

// Model dimensions must agree with the generated corpus.
ModelConfig MatchCorpus(ModelConfig m, const SynthConfig &s) {
  if (m.vocab_size != s.vocab_size || m.input_dim != s.feature_dim)
    throw ConfigError("model vocab_size/input_dim do not match the dataset");
  return m;
}

std::vector<BenchShape> ParseSizes(const std::string &text) {
  std::vector<BenchShape> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    BenchShape b{};
    char c1 = 0, c2 = 0;
    std::stringstream is(item);
    if (!(is >> b.frames >> c1 >> b.labels >> c2 >> b.vocab) || c1 != ',' || c2 != ',')
      throw ConfigError("sizes must look like T,U,K;T,U,K");
    out.push_back(b);
  }
  return out;
}

void PrintChecks(const std::vector<TrendCheck> &checks) {
  for (const TrendCheck &c : checks)
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ":" << c.detail << '\n';
}

}  // namespace

int Main(int argc, char **argv) {
  CLI::App app{"Transducer knowledge distillation toolkit"};
  app.require_subcommand(1);
  std::function<void()> run;

  // gen-data
  Common gen;
  std::string gen_out;
  auto *gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  AddCommon(gen_cmd, &gen);
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->callback([&] {
    run = [&] {
      SynthConfig s = gen.Config().synth;
      if (gen.seed_set) s.seed = gen.seed;
      SaveDataset(gen_out, s, GenerateDataset(s));
      std::cerr << "wrote corpus to " << gen_out << '\n';
    };
  });

  // train-teacher
  Common tt;
  std::string tt_data, tt_out;
  auto *tt_cmd = app.add_subcommand("train-teacher", "Train the teacher on the labelled split");
  AddCommon(tt_cmd, &tt);
  tt_cmd->add_option("--data", tt_data, "Corpus directory")->required();
  tt_cmd->add_option("--out", tt_out, "Checkpoint path")->required();
  tt_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = tt.Config();
      ModelConfig m = MatchCorpus(c.teacher, LoadSynthConfig(tt_data));
      auto labelled = LoadSplit(tt_data, Split::kLabelled);
      auto dev = LoadSplit(tt_data, Split::kDev);
      std::vector<TrainingItem> items;
      for (const Utterance &u : labelled) items.push_back({&u, *u.tokens, true});
      KdConfig kd;
      kd.lambda = 0.0;
      TrainOutcome out = TrainTransducer(
          TransducerModel(m, DeriveSeed(tt.seed, SeedStream::kTeacherInit)), items, dev,
          c.teacher_schedule, kd, DeriveSeed(tt.seed, SeedStream::kTeacherShuffle),
          &std::cerr);
      SaveModel(tt_out, out.model);
      std::cout << "best epoch " << out.best_epoch << " dev WER " << out.best_dev_wer << '\n';
    };
  });

  // train-lm
  Common lm_opts;
  std::string lm_data, lm_out;
  int32_t lm_order = 0;
  double lm_alpha = 0.0;
  auto *lm_cmd = app.add_subcommand("train-lm", "Train the n-gram LM on the text corpus");
  AddCommon(lm_cmd, &lm_opts);
  lm_cmd->add_option("--data", lm_data, "Corpus directory")->required();
  lm_cmd->add_option("--out", lm_out, "LM path (JSON)")->required();
  lm_cmd->add_option("--order", lm_order, "N-gram order (default from config)");
  lm_cmd->add_option("--alpha", lm_alpha, "Add-alpha smoothing (default from config)");
  lm_cmd->callback([&] {
    run = [&] {
      LmConfig c = lm_opts.Config().lm;
      if (lm_order != 0) c.order = lm_order;
      if (lm_alpha != 0.0) c.alpha = lm_alpha;
      SynthConfig s = LoadSynthConfig(lm_data);
      NgramLm::Train(LoadLmText(lm_data), c.order, c.alpha, s.vocab_size).Save(lm_out);
    };
  });

  // make-targets
  Common mt;
  std::string mt_data, mt_teacher, mt_lm, mt_out, mt_pseudo, mt_split = "labelled";
  int32_t mt_beam = 0;
  std::optional<double> mt_fuse;
  auto *mt_cmd = app.add_subcommand("make-targets", "Cache one-best teacher targets");
  AddCommon(mt_cmd, &mt);
  mt_cmd->add_option("--data", mt_data, "Corpus directory")->required();
  mt_cmd->add_option("--teacher", mt_teacher, "Teacher checkpoint")->required();
  mt_cmd->add_option("--split", mt_split, "labelled or unlabelled")
      ->check(CLI::IsMember({"labelled", "unlabelled"}));
  mt_cmd->add_option("--beam", mt_beam, "Beam for pseudo transcription");
  mt_cmd->add_option("--lm", mt_lm, "LM for fusion");
  mt_cmd->add_option("--fuse-lm,--beta", mt_fuse, "Fuse targets and decoding with the LM at this weight");
  mt_cmd->add_option("--out", mt_out, "Target cache (JSON Lines)")->required();
  mt_cmd->add_option("--pseudo-out", mt_pseudo, "Pseudo transcriptions (unlabelled split)");
  mt_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = mt.Config();
      TransducerModel teacher = LoadModel(mt_teacher);
      Split split = ParseSplit(mt_split);
      if (split == Split::kUnlabelled && mt_pseudo.empty())
        throw ConfigError("--pseudo-out is required for the unlabelled split");
      TargetOptions o;
      o.beam = mt_beam > 0 ? mt_beam : c.beam;
      std::optional<NgramLm> lm;
      if (mt_fuse) {
        if (mt_lm.empty()) throw ConfigError("--fuse-lm needs --lm");
        lm = NgramLm::Load(mt_lm);
        o.lm = &*lm;
        o.fuse = true;
        o.beta = *mt_fuse;
      }
      auto utts = LoadSplit(mt_data, split);
      GeneratedTargets g = MakeTargets(teacher, utts, o);
      std::ofstream os(mt_out, std::ios::binary);
      if (!os) throw FormatError("cannot write " + mt_out);
      WriteTargetCache(os, g.targets);
      if (!mt_pseudo.empty()) WriteHypotheses(mt_pseudo, g.pseudo);
    };
  });

  // train-student
  Common ts;
  std::string ts_data, ts_out, ts_targets, ts_unl_targets, ts_pseudo, ts_init, ts_teacher;
  std::string ts_strategy = "baseline", ts_variant = "onebest";
  std::optional<double> ts_lambda;
  int32_t ts_tau = 0;
  bool ts_streaming = false, ts_no_pseudo_nll = false;
  auto *ts_cmd = app.add_subcommand("train-student", "Train a student");
  AddCommon(ts_cmd, &ts);
  ts_cmd->add_option("--data", ts_data, "Corpus directory")->required();
  ts_cmd->add_option("--out", ts_out, "Checkpoint path")->required();
  ts_cmd->add_option("--strategy", ts_strategy, "baseline, pseudo, st1 or st2")
      ->check(CLI::IsMember({"baseline", "pseudo", "pseudo_only", "st1", "st2"}));
  ts_cmd->add_option("--variant", ts_variant, "full, collapsed or onebest")
      ->check(CLI::IsMember({"full", "collapsed", "onebest"}));
  ts_cmd->add_option("--lambda", ts_lambda, "KD weight (default from config)");
  ts_cmd->add_option("--tau", ts_tau, "Delay of the student targets in frames");
  ts_cmd->add_flag("--streaming", ts_streaming, "Causal student encoder");
  ts_cmd->add_flag("--no-pseudo-nll", ts_no_pseudo_nll,
                   "No transducer loss on pseudo transcriptions");
  ts_cmd->add_option("--targets", ts_targets, "Labelled target cache");
  ts_cmd->add_option("--unlabelled-targets", ts_unl_targets, "Unlabelled target cache");
  ts_cmd->add_option("--pseudo", ts_pseudo, "Pseudo transcriptions of the unlabelled split");
  ts_cmd->add_option("--init", ts_init, "Initial checkpoint (ST2)");
  ts_cmd->add_option("--teacher", ts_teacher, "Teacher checkpoint (full and collapsed KD)");
  ts_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = ts.Config();
      SynthConfig s = LoadSynthConfig(ts_data);
      StudentJob job;
      job.strategy = ParseStrategy(ts_strategy);
      job.kd = c.kd;
      job.kd.variant = ParseKdVariant(ts_variant);
      if (ts_lambda) job.kd.lambda = *ts_lambda;
      job.kd.tau = ts_tau;
      job.streaming = ts_streaming;
      job.pseudo_nll = c.pseudo_nll && !ts_no_pseudo_nll;
      job.use_unlabelled = !ts_pseudo.empty();
      std::optional<TransducerModel> init;
      if (!ts_init.empty()) {
        init = LoadModel(ts_init);
        job.init = &*init;
      }
      job = job.Normalized();
      if (job.use_unlabelled && ts_pseudo.empty())
        throw ConfigError("the pseudo strategy needs --pseudo");

      auto labelled = LoadSplit(ts_data, Split::kLabelled);
      auto dev = LoadSplit(ts_data, Split::kDev);
      std::vector<Utterance> unlabelled;
      std::vector<KdTargetSet> lab_targets, unl_targets;
      std::vector<std::pair<std::string, Hypothesis>> pseudo;
      std::vector<CollapsedTargetLattice> collapsed;
      std::vector<OutputLattice> full;
      StudentData data;
      data.labelled = labelled;
      const bool kd = job.kd.lambda > 0.0;
      if (kd && job.kd.variant == KdVariant::kOneBest) {
        if (ts_targets.empty()) throw ConfigError("one-best KD needs --targets");
        lab_targets = LoadTargets(ts_targets, labelled);
        data.labelled_targets = &lab_targets;
      }
      if (kd && job.kd.variant != KdVariant::kOneBest) {
        if (ts_teacher.empty())
          throw ConfigError(std::string(KdVariantName(job.kd.variant)) + " KD needs --teacher");
        TransducerModel teacher = LoadModel(ts_teacher);
        if (job.kd.variant == KdVariant::kCollapsed) {
          collapsed = CollapsedTargets(teacher, labelled);
          data.collapsed = &collapsed;
        } else {
          full = TeacherLattices(teacher, labelled);
          data.full = &full;
        }
      }
      if (job.use_unlabelled) {
        unlabelled = LoadSplit(ts_data, Split::kUnlabelled);
        pseudo = AlignById(ReadHypotheses(ts_pseudo), unlabelled,
                           [](const auto &p) { return p.first; }, ts_pseudo);
        data.unlabelled = unlabelled;
        data.pseudo = &pseudo;
        if (kd && job.kd.variant == KdVariant::kOneBest) {
          if (ts_unl_targets.empty()) throw ConfigError("KD on unlabelled data needs --unlabelled-targets");
          unl_targets = LoadTargets(ts_unl_targets, unlabelled);
          data.unlabelled_targets = &unl_targets;
        }
      }
      const bool st2 = job.strategy == Strategy::kSt2;
      const ScheduleConfig &schedule =
          job.use_unlabelled ? (st2 ? c.unlabelled_finetune_schedule : c.unlabelled_schedule)
                             : (st2 ? c.finetune_schedule : c.student_schedule);
      TrainOutcome out =
          TrainStudent(job, MatchCorpus(c.student, s), data, dev, schedule,
                       DeriveSeed(ts.seed, SeedStream::kStudent), &std::cerr);
      SaveModel(ts_out, out.model);
      std::cout << "best epoch " << out.best_epoch << " dev WER " << out.best_dev_wer << '\n';
    };
  });

  // eval
  Common ev;
  std::string ev_data, ev_model, ev_lm, ev_hyps, ev_results, ev_split = "dev";
  std::string ev_setup = "labelled", ev_label, ev_base_setup, ev_base;
  int32_t ev_beam = 0;
  double ev_beta = 0.0;
  auto *ev_cmd = app.add_subcommand("eval", "Decode and score a split");
  AddCommon(ev_cmd, &ev);
  ev_cmd->add_option("--data", ev_data, "Corpus directory")->required();
  ev_cmd->add_option("--model", ev_model, "Checkpoint")->required();
  ev_cmd->add_option("--split", ev_split, "dev, test, labelled or unlabelled")
      ->check(CLI::IsMember({"dev", "test", "labelled", "unlabelled"}));
  ev_cmd->add_option("--beam", ev_beam, "Beam width (default from config)");
  ev_cmd->add_option("--lm", ev_lm, "LM for shallow fusion");
  ev_cmd->add_option("--beta", ev_beta, "LM weight");
  ev_cmd->add_option("--hyps", ev_hyps, "Write hypotheses (JSON Lines)");
  ev_cmd->add_option("--results", ev_results, "Results CSV to append a dev/test row to");
  ev_cmd->add_option("--setup", ev_setup, "Row setup");
  ev_cmd->add_option("--label", ev_label, "Row label (defaults to the model path)");
  ev_cmd->add_option("--baseline-setup", ev_base_setup, "Setup of the WERR baseline row");
  ev_cmd->add_option("--baseline", ev_base, "Label of the WERR baseline row");
  ev_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = ev.Config();
      TransducerModel model = LoadModel(ev_model);
      EvalOptions o;
      o.beam = ev_beam > 0 ? ev_beam : c.beam;
      std::optional<NgramLm> lm;
      if (!ev_lm.empty()) {
        lm = NgramLm::Load(ev_lm);
        o.lm = &*lm;
        o.beta = ev_beta;
      } else if (ev_beta != 0.0) {
        throw ConfigError("--beta needs --lm");
      }
      auto score = [&](Split split,
                       std::vector<std::pair<std::string, Hypothesis>> *hyps) {
        return Evaluate(model, LoadSplit(ev_data, split), LoadReferences(ev_data, split), o,
                        hyps);
      };
      std::vector<std::pair<std::string, Hypothesis>> hyps;
      WerReport r = score(ParseSplit(ev_split), &hyps);
      if (!ev_hyps.empty()) WriteHypotheses(ev_hyps, hyps);
      nlohmann::json j{{"split", ev_split},         {"wer", r.wer},
                       {"substitutions", r.substitutions}, {"deletions", r.deletions},
                       {"insertions", r.insertions},       {"ref_words", r.ref_words}};
      std::cout << j.dump() << '\n';
      if (!ev_results.empty()) {
        ResultsTable table;
        if (std::filesystem::exists(ev_results)) {
          std::ifstream is(ev_results);
          table = ResultsTable::ReadCsv(is);
        }
        ResultRow row;
        row.setup = ev_setup;
        row.label = ev_label.empty() ? ev_model : ev_label;
        row.seed = ev.seed;
        row.dev_wer = score(Split::kDev, nullptr).wer;
        row.test_wer = score(Split::kTest, nullptr).wer;
        row.baseline = ev_base;
        if (!ev_base.empty()) row.baseline_setup = ev_base_setup.empty() ? ev_setup : ev_base_setup;
        table.Add(row);
        std::ofstream os(ev_results, std::ios::binary);
        table.WriteCsv(os);
      }
    };
  });

  // bench
  std::vector<std::string> bench_variants;
  std::string bench_sizes, bench_out;
  int32_t bench_repeats = 5;
  uint64_t bench_seed = 1;
  auto *bench_cmd = app.add_subcommand("bench", "Stored-value and timing scaling of KD targets");
  bench_cmd->add_option("--variant", bench_variants, "Variants (default all)")
      ->check(CLI::IsMember({"full", "collapsed", "onebest"}));
  bench_cmd->add_option("--sizes", bench_sizes, "Grid as T,U,K;T,U,K;...");
  bench_cmd->add_option("--repeats", bench_repeats, "Timing repeats");
  bench_cmd->add_option("--seed", bench_seed, "Random seed");
  bench_cmd->add_option("--out", bench_out, "CSV output (default stdout)");
  bench_cmd->callback([&] {
    run = [&] {
      std::vector<KdVariant> variants;
      for (const std::string &v : bench_variants) variants.push_back(ParseKdVariant(v));
      if (variants.empty())
        variants = {KdVariant::kFullLattice, KdVariant::kCollapsed, KdVariant::kOneBest};
      auto grid = bench_sizes.empty() ? DefaultBenchGrid() : ParseSizes(bench_sizes);
      auto rows = RunComplexityBench(grid, variants, bench_repeats, bench_seed);
      if (bench_out.empty()) {
        WriteBenchCsv(std::cout, rows);
      } else {
        std::ofstream os(bench_out, std::ios::binary);
        WriteBenchCsv(os, rows);
      }
      // Fits over the rows sharing the first shape's vocabulary size.
      for (KdVariant v : variants) {
        std::vector<double> size, stored, secs;
        for (const BenchRow &r : rows) {
          if (r.variant != KdVariantName(v) || r.vocab != grid.front().vocab) continue;
          size.push_back(v == KdVariant::kOneBest
                             ? static_cast<double>(r.frames + r.labels)
                             : static_cast<double>(r.frames) * (r.labels + 1));
          stored.push_back(static_cast<double>(r.stored_values));
          secs.push_back(std::max(r.seconds, 1e-12));
        }
        if (size.size() < 2) continue;
        std::cerr << KdVariantName(v) << ": memory exponent "
                  << LogLogSlope(size, stored) << ", time exponent "
                  << LogLogSlope(size, secs) << " vs "
                  << (v == KdVariant::kOneBest ? "T+U" : "T(U+1)") << '\n';
      }
    };
  });

  // report
  Common rep;
  std::string rep_results;
  auto *rep_cmd = app.add_subcommand("report", "Render a results table and its trend checks");
  AddCommon(rep_cmd, &rep);
  rep_cmd->add_option("--results", rep_results, "Results CSV")->required();
  rep_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = rep.Config();
      std::ifstream is(rep_results);
      if (!is) throw FormatError("cannot open " + rep_results);
      ResultsTable table = ResultsTable::ReadCsv(is);
      table.Render(std::cout);
      c.seeds.clear();
      for (const ResultRow &r : table.Rows())
        if (std::find(c.seeds.begin(), c.seeds.end(), r.seed) == c.seeds.end())
          c.seeds.push_back(r.seed);
      PrintChecks(CheckTableTrends(c, table));
      PrintChecks(CheckStreamingTrends(c, table));
      PrintChecks(CheckFusionTrends(c, table));
    };
  });

  // run-experiment
  Common ex;
  std::string ex_out;
  auto *ex_cmd = app.add_subcommand("run-experiment", "Run the full seed matrix");
  AddCommon(ex_cmd, &ex);
  ex_cmd->add_option("--out", ex_out, "Output directory")->required();
  ex_cmd->callback([&] {
    run = [&] {
      ExperimentConfig c = ex.Config();
      if (ex.seed_set) c.seeds = {ex.seed};
      ExperimentResult r = RunExperiment(c, ex_out, &std::cerr);
      r.table.Render(std::cout);
      PrintChecks(CheckTableTrends(c, r.table));
      PrintChecks(CheckStreamingTrends(c, r.table));
      PrintChecks(CheckFusionTrends(c, r.table));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    run();
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError &e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace tdkd

int main(int argc, char **argv) { return tdkd::Main(argc, argv); }

// core/src/experiment.cc

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

#include "tdkd/experiment.h"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "tdkd/errors.h"
#include "tdkd/parallel.h"
#include "tdkd/transducer-loss.h"

namespace tdkd {

const char *StrategyName(Strategy s) {
  switch (s) {
    case Strategy::kBaseline: return "baseline";
    case Strategy::kPseudoOnly: return "pseudo";
    case Strategy::kSt1: return "st1";
    case Strategy::kSt2: return "st2";
  }
  return "?";
}

Strategy ParseStrategy(const std::string &name) {
  if (name == "baseline") return Strategy::kBaseline;
  if (name == "pseudo" || name == "pseudo_only") return Strategy::kPseudoOnly;
  if (name == "st1") return Strategy::kSt1;
  if (name == "st2") return Strategy::kSt2;
  throw ConfigError("unknown strategy '" + name + "'");
}

StudentJob StudentJob::Normalized() const {
  StudentJob j = *this;
  j.kd.Check();
  switch (strategy) {
    case Strategy::kBaseline:
      if (use_unlabelled)
        throw ConfigError("baseline trains on labelled data only; use strategy pseudo");
      j.kd.lambda = 0.0;
      break;
    case Strategy::kPseudoOnly:
      j.kd.lambda = 0.0;
      j.use_unlabelled = true;
      break;
    case Strategy::kSt1:
      break;
    case Strategy::kSt2:
      if (init == nullptr) throw ConfigError("ST2 needs an initial model");
      break;
  }
  if (j.kd.tau != 0 && j.kd.variant != KdVariant::kOneBest)
    throw ConfigError("tau applies to one-best distillation only");
  return j;
}

namespace {

template <typename T>
void CheckAligned(const std::vector<T> *v, std::span<const Utterance> utts,
                  const char *what) {
  if (v == nullptr) throw ConfigError(std::string("missing ") + what);
  if (v->size() != utts.size())
    throw ConfigError(std::string(what) + " do not match the utterance list");
}

}  // namespace

std::vector<OutputLattice> TeacherLattices(const TransducerModel &teacher,
                                           std::span<const Utterance> utts) {
  std::vector<OutputLattice> out(utts.size());
  ParallelFor(utts.size(), [&](size_t i) {
    if (!utts[i].tokens) throw FormatError("no transcript for " + utts[i].id);
    out[i] = ForwardLattice(teacher, utts[i].features, *utts[i].tokens);
  });
  return out;
}

std::vector<CollapsedTargetLattice> CollapsedTargets(const TransducerModel &teacher,
                                                     std::span<const Utterance> utts) {
  std::vector<CollapsedTargetLattice> out(utts.size());
  ParallelFor(utts.size(), [&](size_t i) {
    if (!utts[i].tokens) throw FormatError("no transcript for " + utts[i].id);
    out[i] = CollapseLattice(ForwardLattice(teacher, utts[i].features, *utts[i].tokens),
                             *utts[i].tokens);
  });
  return out;
}

TrainOutcome TrainStudent(const StudentJob &job, const ModelConfig &student,
                          const StudentData &data, std::span<const Utterance> dev,
                          const ScheduleConfig &schedule, uint64_t seed,
                          std::ostream *log) {
  const StudentJob j = job.Normalized();
  ModelConfig cfg = student;
  cfg.streaming = j.streaming;
  if (j.streaming) cfg.lookahead = 0;
  cfg.Check();

  const bool use_kd = j.kd.lambda > 0.0;
  const bool one_best = use_kd && j.kd.variant == KdVariant::kOneBest;
  const bool collapsed = use_kd && j.kd.variant == KdVariant::kCollapsed;
  const bool full = use_kd && j.kd.variant == KdVariant::kFullLattice;
  if (j.kd.tau > 0 && !j.streaming && log)
    *log << "warning: tau " << j.kd.tau << " on a non-streaming student\n";

  std::vector<TrainingItem> items;
  if (one_best) CheckAligned(data.labelled_targets, data.labelled, "labelled targets");
  if (collapsed) CheckAligned(data.collapsed, data.labelled, "collapsed targets");
  if (full) CheckAligned(data.full, data.labelled, "teacher lattices");
  for (size_t i = 0; i < data.labelled.size(); ++i) {
    const Utterance &u = data.labelled[i];
    if (!u.tokens) throw FormatError("labelled utterance without tokens: " + u.id);
    TrainingItem item{&u, *u.tokens, true};
    if (one_best) {
      item.one_best = &(*data.labelled_targets)[i];
      if (item.one_best->id != u.id) throw FormatError("target order mismatch at " + u.id);
    }
    if (collapsed) item.collapsed_target = &(*data.collapsed)[i];
    if (full) item.full_target = &(*data.full)[i];
    items.push_back(std::move(item));
  }
  if (j.use_unlabelled) {
    if (collapsed || full)
      throw ConfigError(std::string(KdVariantName(j.kd.variant)) +
                        " distillation uses the labelled split only");
    CheckAligned(data.pseudo, data.unlabelled, "pseudo transcriptions");
    if (one_best) CheckAligned(data.unlabelled_targets, data.unlabelled, "unlabelled targets");
    const bool nll = j.pseudo_nll || j.strategy == Strategy::kPseudoOnly;
    for (size_t i = 0; i < data.unlabelled.size(); ++i) {
      const Utterance &u = data.unlabelled[i];
      const auto &[id, hyp] = (*data.pseudo)[i];
      if (id != u.id) throw FormatError("pseudo transcription order mismatch at " + u.id);
      TrainingItem item{&u, hyp.tokens, nll};
      if (one_best) {
        item.one_best = &(*data.unlabelled_targets)[i];
        if (item.one_best->id != u.id)
          throw FormatError("target order mismatch at " + u.id);
      }
      if (item.apply_nll || use_kd) items.push_back(std::move(item));
    }
  }

  TransducerModel init = j.init ? *j.init : TransducerModel(cfg, seed);
  if (!(init.Config() == cfg))
    throw ConfigError("initial model does not match the student configuration");
  return TrainTransducer(std::move(init), items, dev, schedule, j.kd, seed, log);
}

// Configuration.

void ExperimentConfig::Check() const {
  synth.Check();
  teacher.Check();
  student.Check();
  teacher_schedule.Check();
  student_schedule.Check();
  finetune_schedule.Check();
  unlabelled_schedule.Check();
  unlabelled_finetune_schedule.Check();
  kd.Check();
  if (teacher.vocab_size != synth.vocab_size || student.vocab_size != synth.vocab_size)
    throw ConfigError("model vocab_size must match the corpus");
  if (teacher.input_dim != synth.feature_dim || student.input_dim != synth.feature_dim)
    throw ConfigError("model input_dim must match the corpus feature_dim");
  if (teacher.streaming) throw ConfigError("the teacher must be non-streaming");
  if (lm.order < 1) throw ConfigError("lm order must be >= 1");
  if (!(lm.alpha > 0.0)) throw ConfigError("lm alpha must be > 0");
  if (beam < 1) throw ConfigError("beam must be >= 1");
  if (fusion_betas.empty()) throw ConfigError("fusion_betas must not be empty");
  for (double b : fusion_betas)
    if (!std::isfinite(b) || !(b > 0.0))
      throw ConfigError("fusion_betas must be finite and > 0");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  for (int32_t t : TauSweep())
    if (t < 0) throw ConfigError("tau must be >= 0");
  if (!(collapsed_lambda > 0.0)) throw ConfigError("collapsed_lambda must be > 0");
}

std::vector<int32_t> ExperimentConfig::TauSweep() const {
  if (!taus.empty()) return taus;
  int32_t f = synth.frames_per_token;
  std::set<int32_t> s{0, std::max(1, f - 2), f, f + 2};
  return {s.begin(), s.end()};
}

nlohmann::json LmConfigToJson(const LmConfig &c) {
  return {{"order", c.order}, {"alpha", c.alpha}};
}

LmConfig LmConfigFromJson(const nlohmann::json &j) {
  LmConfig c;
  c.order = j.value("order", c.order);
  c.alpha = j.value("alpha", c.alpha);
  return c;
}

namespace {

nlohmann::json KdToJson(const KdConfig &c) {
  return {{"lambda", c.lambda}, {"tau", c.tau}, {"variant", KdVariantName(c.variant)}};
}

KdConfig KdFromJson(const nlohmann::json &j) {
  KdConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.tau = j.value("tau", c.tau);
  if (j.contains("variant")) c.variant = ParseKdVariant(j.at("variant").get<std::string>());
  return c;
}

ModelConfig DefaultTeacher() {
  ModelConfig m;
  m.encoder_hidden = 48;
  m.encoder_layers = 2;
  m.pred_embed = 16;
  m.pred_hidden = 32;
  m.joint_hidden = 48;
  return m;
}

ScheduleConfig Schedule(int32_t epochs, double lr, double decay = 1.0) {
  ScheduleConfig s;
  s.epochs = epochs;
  s.learning_rate = lr;
  s.lr_decay = decay;
  return s;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Tokens follow a Zipf prior that, most of the time, is re-ranked by the
  // two preceding tokens. The LM text split is 50 times the labelled one, so
  // the LM knows sequence statistics the labelled transcripts cannot teach.
  synth.frames_per_token = 3;
  synth.context_weight = 0.9;
  synth.context_order = 2;
  synth.context_exponent = 2.0;
  synth.n_labelled = 400;
  synth.n_unlabelled = 3440;
  synth.n_dev = 2000;
  synth.n_test = 500;
  synth.n_lm_text = 20000;
  lm.order = 3;
  teacher = DefaultTeacher();
  teacher_schedule = Schedule(40, 0.1, 0.96);
  student_schedule = Schedule(60, 0.1, 0.93);
  finetune_schedule = Schedule(30, 0.03, 0.93);
  unlabelled_schedule = Schedule(15, 0.1, 0.85);
  unlabelled_finetune_schedule = Schedule(8, 0.03, 0.85);
}

ExperimentConfig ExperimentConfig::Small() {
  ExperimentConfig c;
  c.synth.n_labelled = 24;
  c.synth.n_unlabelled = 48;
  c.synth.n_dev = 12;
  c.synth.n_test = 12;
  c.synth.n_lm_text = 200;
  c.teacher.encoder_hidden = 12;
  c.teacher.encoder_layers = 1;
  c.teacher.pred_embed = 8;
  c.teacher.pred_hidden = 12;
  c.teacher.joint_hidden = 12;
  c.student.encoder_hidden = 6;
  c.student.pred_embed = 4;
  c.student.pred_hidden = 6;
  c.student.joint_hidden = 6;
  c.teacher_schedule = Schedule(3, 0.1);
  c.student_schedule = Schedule(2, 0.1);
  c.finetune_schedule = Schedule(2, 0.05);
  c.unlabelled_schedule = Schedule(2, 0.1);
  c.unlabelled_finetune_schedule = Schedule(1, 0.05);
  c.seeds = {1};
  c.taus = {0, 2};
  return c;
}

nlohmann::json ExperimentConfig::ToJson() const {
  nlohmann::json j;
  j["synth"] = synth.ToJson();
  j["teacher"] = teacher.ToJson();
  j["student"] = student.ToJson();
  j["teacher_schedule"] = teacher_schedule.ToJson();
  j["student_schedule"] = student_schedule.ToJson();
  j["finetune_schedule"] = finetune_schedule.ToJson();
  j["unlabelled_schedule"] = unlabelled_schedule.ToJson();
  j["unlabelled_finetune_schedule"] = unlabelled_finetune_schedule.ToJson();
  j["kd"] = KdToJson(kd);
  j["lm"] = LmConfigToJson(lm);
  j["beam"] = beam;
  j["fusion_betas"] = fusion_betas;
  j["seeds"] = seeds;
  j["taus"] = taus;
  j["run_collapsed"] = run_collapsed;
  j["collapsed_lambda"] = collapsed_lambda;
  j["run_unlabelled"] = run_unlabelled;
  j["run_streaming"] = run_streaming;
  j["pseudo_nll"] = pseudo_nll;
  return j;
}

ExperimentConfig ExperimentConfig::FromJson(const nlohmann::json &j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known{
      "synth", "teacher", "student", "teacher_schedule", "student_schedule",
      "finetune_schedule", "unlabelled_schedule", "unlabelled_finetune_schedule",
      "kd", "lm", "beam", "fusion_betas", "seeds", "taus", "run_collapsed",
      "collapsed_lambda", "run_unlabelled", "run_streaming", "pseudo_nll"};
  for (const auto &[key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  ExperimentConfig c;
  try {
    // Nested objects override the defaults field by field.
    auto merged = [&](const char *key, const nlohmann::json &defaults) {
      nlohmann::json out = defaults;
      if (j.contains(key)) out.merge_patch(j.at(key));
      return out;
    };
    c.synth = SynthConfig::FromJson(merged("synth", c.synth.ToJson()));
    c.teacher = ModelConfig::FromJson(merged("teacher", c.teacher.ToJson()));
    c.student = ModelConfig::FromJson(merged("student", c.student.ToJson()));
    c.teacher_schedule =
        ScheduleConfig::FromJson(merged("teacher_schedule", c.teacher_schedule.ToJson()));
    c.student_schedule =
        ScheduleConfig::FromJson(merged("student_schedule", c.student_schedule.ToJson()));
    c.finetune_schedule =
        ScheduleConfig::FromJson(merged("finetune_schedule", c.finetune_schedule.ToJson()));
    c.unlabelled_schedule = ScheduleConfig::FromJson(
        merged("unlabelled_schedule", c.unlabelled_schedule.ToJson()));
    c.unlabelled_finetune_schedule = ScheduleConfig::FromJson(
        merged("unlabelled_finetune_schedule", c.unlabelled_finetune_schedule.ToJson()));
    c.kd = KdFromJson(merged("kd", KdToJson(c.kd)));
    c.lm = LmConfigFromJson(merged("lm", LmConfigToJson(c.lm)));
    c.beam = j.value("beam", c.beam);
    if (j.contains("fusion_betas"))
      c.fusion_betas = j.at("fusion_betas").get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    if (j.contains("taus")) c.taus = j.at("taus").get<std::vector<int32_t>>();
    c.run_collapsed = j.value("run_collapsed", c.run_collapsed);
    c.collapsed_lambda = j.value("collapsed_lambda", c.collapsed_lambda);
    c.run_unlabelled = j.value("run_unlabelled", c.run_unlabelled);
    c.run_streaming = j.value("run_streaming", c.run_streaming);
    c.pseudo_nll = j.value("pseudo_nll", c.pseudo_nll);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  c.Check();
  return c;
}

ExperimentConfig ExperimentConfig::Load(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  }
  return FromJson(j);
}

// Results.

double Werr(double base, double value) {
  return base == 0.0 ? 0.0 : (base - value) / base;
}

std::string rows::TauLabel(int32_t tau) {
  return "lambda=0.1, tau=" + std::to_string(tau) + ", ST2";
}

void ResultsTable::Add(ResultRow row) {
  if (Find(row.setup, row.label, row.seed))
    throw ContractViolation("duplicate result row " + row.setup + " / " + row.label);
  rows_.push_back(std::move(row));
}

const ResultRow *ResultsTable::Find(const std::string &setup, const std::string &label,
                                    uint64_t seed) const {
  for (const ResultRow &r : rows_)
    if (r.setup == setup && r.label == label && r.seed == seed) return &r;
  return nullptr;
}

namespace {

std::optional<double> MeanOf(const ResultsTable &table, const std::string &setup,
                             const std::string &label, std::span<const uint64_t> seeds,
                             bool dev) {
  if (seeds.empty()) return std::nullopt;
  double sum = 0.0;
  for (uint64_t s : seeds) {
    const ResultRow *r = table.Find(setup, label, s);
    if (!r) return std::nullopt;
    sum += dev ? r->dev_wer : r->test_wer;
  }
  return sum / static_cast<double>(seeds.size());
}

std::string CsvField(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsvLine(const std::string &line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

constexpr const char *kCsvHeader =
    "setup,label,seed,dev_wer,test_wer,best_epoch,baseline_setup,baseline,werr";

}  // namespace

std::optional<double> ResultsTable::MeanDev(const std::string &setup,
                                            const std::string &label,
                                            std::span<const uint64_t> seeds) const {
  return MeanOf(*this, setup, label, seeds, true);
}

std::optional<double> ResultsTable::MeanTest(const std::string &setup,
                                             const std::string &label,
                                             std::span<const uint64_t> seeds) const {
  return MeanOf(*this, setup, label, seeds, false);
}

void ResultsTable::WriteCsv(std::ostream &os) const {
  os << kCsvHeader << '\n';
  for (const ResultRow &r : rows_) {
    std::string werr;
    if (!r.baseline.empty()) {
      const ResultRow *b = Find(r.baseline_setup, r.baseline, r.seed);
      if (b) werr = Fixed(Werr(b->test_wer, r.test_wer), 6);
    }
    os << CsvField(r.setup) << ',' << CsvField(r.label) << ',' << r.seed << ','
       << Fixed(r.dev_wer, 6) << ',' << Fixed(r.test_wer, 6) << ',' << r.best_epoch << ','
       << CsvField(r.baseline_setup) << ',' << CsvField(r.baseline) << ',' << werr << '\n';
  }
}

ResultsTable ResultsTable::ReadCsv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader)
    throw FormatError("results CSV has an unexpected header");
  ResultsTable table;
  int64_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = SplitCsvLine(line);
    if (f.size() != 9)
      throw FormatError("results CSV line " + std::to_string(lineno) + ": expected 9 fields");
    ResultRow r;
    try {
      r.setup = f[0];
      r.label = f[1];
      r.seed = std::stoull(f[2]);
      r.dev_wer = std::stod(f[3]);
      r.test_wer = std::stod(f[4]);
      r.best_epoch = std::stoi(f[5]);
    } catch (const std::exception &) {
      throw FormatError("results CSV line " + std::to_string(lineno) + ": bad number");
    }
    r.baseline_setup = f[6];
    r.baseline = f[7];
    table.Add(std::move(r));
  }
  return table;
}

void ResultsTable::Render(std::ostream &os) const {
  std::vector<std::string> setups;
  std::vector<uint64_t> seeds;
  for (const ResultRow &r : rows_) {
    if (std::find(setups.begin(), setups.end(), r.setup) == setups.end())
      setups.push_back(r.setup);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end())
      seeds.push_back(r.seed);
  }
  char buf[256];
  for (const std::string &setup : setups) {
    os << setup << '\n';
    std::snprintf(buf, sizeof(buf), "  %-32s %8s %8s %8s  %s\n", "model", "dev WER",
                  "test WER", "WERR", "dev WER per seed");
    os << buf;
    std::vector<std::string> labels;
    for (const ResultRow &r : rows_)
      if (r.setup == setup &&
          std::find(labels.begin(), labels.end(), r.label) == labels.end())
        labels.push_back(r.label);
    for (const std::string &label : labels) {
      std::vector<uint64_t> present;
      std::string per_seed;
      const ResultRow *any = nullptr;
      for (uint64_t s : seeds) {
        if (const ResultRow *r = Find(setup, label, s)) {
          present.push_back(s);
          any = r;
          per_seed += (per_seed.empty() ? "" : " ") + Fixed(100.0 * r->dev_wer, 1);
        }
      }
      double dev = *MeanDev(setup, label, present);
      double test = *MeanTest(setup, label, present);
      std::string werr = "-";
      if (!any->baseline.empty()) {
        auto base = MeanTest(any->baseline_setup, any->baseline, present);
        if (base) werr = Fixed(100.0 * Werr(*base, test), 1) + "%";
      }
      std::snprintf(buf, sizeof(buf), "  %-32s %7s%% %7s%% %8s  %s\n", label.c_str(),
                    Fixed(100.0 * dev, 1).c_str(), Fixed(100.0 * test, 1).c_str(),
                    werr.c_str(), per_seed.c_str());
      os << buf;
    }
    os << '\n';
  }
}

// Pipeline.

uint64_t DeriveSeed(uint64_t seed, SeedStream stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream)};
  std::vector<uint32_t> out(2);
  seq.generate(out.begin(), out.end());
  return (static_cast<uint64_t>(out[0]) << 32) | out[1];
}

namespace {

std::string Slug(const std::string &setup, const std::string &label) {
  std::string out;
  for (char c : setup + "-" + label) {
    bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.';
    if (keep) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!out.empty() && out.back() != '-') {
      out += '-';
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

void WriteTargets(const std::string &path, const std::vector<KdTargetSet> &targets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  WriteTargetCache(os, targets);
}

void WritePseudo(const std::string &path,
                 const std::vector<std::pair<std::string, Hypothesis>> &pseudo) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  for (const auto &[id, hyp] : pseudo) os << HypothesisToJsonLine(id, hyp) << '\n';
}

References RefsOf(std::span<const Utterance> utts) {
  References refs;
  for (const Utterance &u : utts) refs[u.id] = *u.tokens;
  return refs;
}

double PseudoWer(const std::vector<std::pair<std::string, Hypothesis>> &pseudo,
                 const References &sealed) {
  WerReport total;
  for (const auto &[id, hyp] : pseudo) total += ComputeWer(sealed.at(id), hyp.tokens);
  return total.wer;
}

}  // namespace

SeedSummary RunSeed(const ExperimentConfig &config, uint64_t seed, const std::string &dir,
                    ResultsTable *table, std::ostream *log) {
  config.Check();
  Require(table != nullptr, "RunSeed needs a results table");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto path = [&](const std::string &name) { return (fs::path(dir) / name).string(); };
  auto say = [&](const std::string &msg) {
    if (log) *log << "[seed " << seed << "] " << msg << std::endl;
  };

  SynthConfig sc = config.synth;
  sc.seed = seed;
  const Dataset data = GenerateDataset(sc);
  SaveDataset(path("data"), sc, data);
  const References dev_refs = RefsOf(data.dev);
  const References test_refs = RefsOf(data.test);
  const std::span<const Utterance> dev(data.dev);

  SeedSummary summary;
  summary.seed = seed;

  auto record = [&](const std::string &setup, const std::string &label,
                    const TrainOutcome &outcome, const std::string &base_setup,
                    const std::string &base_label) {
    SaveModel(path(Slug(setup, label) + ".ckpt"), outcome.model);
    EvalOptions eo;
    eo.beam = config.beam;
    ResultRow row;
    row.setup = setup;
    row.label = label;
    row.seed = seed;
    row.dev_wer = Evaluate(outcome.model, data.dev, dev_refs, eo).wer;
    row.test_wer = Evaluate(outcome.model, data.test, test_refs, eo).wer;
    row.best_epoch = outcome.best_epoch;
    row.baseline_setup = base_label.empty() ? "" : base_setup;
    row.baseline = base_label;
    say(setup + " / " + label + ": dev " + Fixed(100.0 * row.dev_wer, 1) + "% test " +
        Fixed(100.0 * row.test_wer, 1) + "% (epoch " + std::to_string(row.best_epoch) +
        ")");
    table->Add(std::move(row));
  };

  // Teacher.
  say("training teacher");
  std::vector<TrainingItem> labelled_items;
  for (const Utterance &u : data.labelled) labelled_items.push_back({&u, *u.tokens, true});
  KdConfig no_kd;
  no_kd.lambda = 0.0;
  TrainOutcome teacher_run = TrainTransducer(
      TransducerModel(config.teacher, DeriveSeed(seed, SeedStream::kTeacherInit)), labelled_items, dev,
      config.teacher_schedule, no_kd, DeriveSeed(seed, SeedStream::kTeacherShuffle));
  const TransducerModel &teacher = teacher_run.model;
  summary.teacher_params = teacher.NumParams();
  record(rows::kLabelled, rows::kTeacher, teacher_run, "", "");

  NgramLm lm = NgramLm::Train(data.lm_text, config.lm.order, config.lm.alpha,
                              config.synth.vocab_size);
  lm.Save(path("lm.json"));

  // Distillation targets.
  say("generating targets");
  TargetOptions plain;
  plain.beam = config.beam;
  summary.fusion_beta = config.fusion_betas.front();
  if (config.fusion_betas.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    for (double beta : config.fusion_betas) {
      EvalOptions eo;
      eo.beam = config.beam;
      eo.lm = &lm;
      eo.beta = beta;
      double wer = Evaluate(teacher, data.dev, dev_refs, eo).wer;
      if (wer < best) {
        best = wer;
        summary.fusion_beta = beta;
      }
    }
    say("LM weight " + Fixed(summary.fusion_beta, 2) + " (teacher dev WER with LM " +
        Fixed(100.0 * best, 1) + "%)");
  }
  TargetOptions fused = plain;
  fused.lm = &lm;
  fused.fuse = true;
  fused.beta = summary.fusion_beta;
  const std::vector<KdTargetSet> lab_targets =
      MakeTargets(teacher, data.labelled, plain).targets;
  const std::vector<KdTargetSet> lab_targets_lm =
      MakeTargets(teacher, data.labelled, fused).targets;
  WriteTargets(path("targets-labelled.jsonl"), lab_targets);
  WriteTargets(path("targets-labelled-lm.jsonl"), lab_targets_lm);
  GeneratedTargets unl, unl_lm;
  if (config.run_unlabelled) {
    unl = MakeTargets(teacher, data.unlabelled, plain);
    unl_lm = MakeTargets(teacher, data.unlabelled, fused);
    WriteTargets(path("targets-unlabelled.jsonl"), unl.targets);
    WriteTargets(path("targets-unlabelled-lm.jsonl"), unl_lm.targets);
    WritePseudo(path("pseudo-unlabelled.jsonl"), unl.pseudo);
    WritePseudo(path("pseudo-unlabelled-lm.jsonl"), unl_lm.pseudo);
    say("pseudo transcription WER " + Fixed(100.0 * PseudoWer(unl.pseudo,
                                                              data.sealed_unlabelled), 1) +
        "%, with LM " + Fixed(100.0 * PseudoWer(unl_lm.pseudo, data.sealed_unlabelled), 1) +
        "%");
  }
  std::vector<CollapsedTargetLattice> collapsed;
  if (config.run_collapsed) collapsed = CollapsedTargets(teacher, data.labelled);

  // Students. Every student run shares the initialisation and shuffle seed,
  // so rows of one seed differ only in their training signal.
  const uint64_t student_seed = DeriveSeed(seed, SeedStream::kStudent);
  summary.student_params = TransducerModel(config.student).NumParams();
  auto train = [&](const StudentJob &job, const StudentData &sd,
                   const ScheduleConfig &schedule) {
    StudentJob j = job;
    j.pseudo_nll = config.pseudo_nll;
    return TrainStudent(j, config.student, sd, dev, schedule, student_seed);
  };
  auto job = [&](Strategy s, double lambda, const TransducerModel *init,
                 bool streaming = false, int32_t tau = 0) {
    StudentJob j;
    j.strategy = s;
    j.kd = config.kd;
    j.kd.lambda = lambda;
    j.kd.tau = tau;
    j.init = init;
    j.streaming = streaming;
    j.use_unlabelled = false;
    return j;
  };
  const double lambda = config.kd.lambda;
  using namespace rows;

  StudentData lab;
  lab.labelled = data.labelled;
  lab.labelled_targets = &lab_targets;
  lab.collapsed = &collapsed;
  StudentData lab_lm = lab;
  lab_lm.labelled_targets = &lab_targets_lm;

  say("labelled students");
  TrainOutcome base = train(job(Strategy::kBaseline, 0.0, nullptr), lab,
                            config.student_schedule);
  record(kLabelled, kBaseline, base, "", "");
  record(kLabelled, kContinued,
         train(job(Strategy::kSt2, 0.0, &base.model), lab, config.finetune_schedule),
         kLabelled, kBaseline);
  if (config.run_collapsed) {
    StudentJob c = job(Strategy::kSt1, config.collapsed_lambda, nullptr);
    c.kd.variant = KdVariant::kCollapsed;
    record(kLabelled, kCollapsed, train(c, lab, config.student_schedule), kLabelled,
           kBaseline);
    c.strategy = Strategy::kSt2;
    c.init = &base.model;
    record(kLabelled, kCollapsedSt2, train(c, lab, config.finetune_schedule), kLabelled,
           kBaseline);
  }
  record(kLabelled, kSt1,
         train(job(Strategy::kSt1, lambda, nullptr), lab, config.student_schedule),
         kLabelled, kBaseline);
  TrainOutcome st2 =
      train(job(Strategy::kSt2, lambda, &base.model), lab, config.finetune_schedule);
  record(kLabelled, kSt2, st2, kLabelled, kBaseline);
  record(kLabelled, kSt2Lm,
         train(job(Strategy::kSt2, lambda, &base.model), lab_lm, config.finetune_schedule),
         kLabelled, kBaseline);

  StudentData both = lab;
  StudentData both_lm = lab_lm;
  if (config.run_unlabelled) {
    say("students with unlabelled data");
    both.unlabelled = data.unlabelled;
    both.unlabelled_targets = &unl.targets;
    both.pseudo = &unl.pseudo;
    both_lm.unlabelled = data.unlabelled;
    both_lm.unlabelled_targets = &unl_lm.targets;
    both_lm.pseudo = &unl_lm.pseudo;
    auto with_unl = [&](StudentJob j) {
      j.use_unlabelled = true;
      return j;
    };
    TrainOutcome pseudo = train(job(Strategy::kPseudoOnly, 0.0, nullptr), both,
                                config.unlabelled_schedule);
    record(kUnlabelled, kPseudo, pseudo, kLabelled, kBaseline);
    TrainOutcome pseudo_lm = train(job(Strategy::kPseudoOnly, 0.0, nullptr), both_lm,
                                   config.unlabelled_schedule);
    record(kUnlabelled, kPseudoLm, pseudo_lm, kLabelled, kBaseline);
    record(kUnlabelled, kSt1,
           train(with_unl(job(Strategy::kSt1, lambda, nullptr)), both,
                 config.unlabelled_schedule),
           kLabelled, kBaseline);
    record(kUnlabelled, kSt2,
           train(with_unl(job(Strategy::kSt2, lambda, &pseudo.model)), both,
                 config.unlabelled_finetune_schedule),
           kLabelled, kBaseline);
    record(kUnlabelled, kSt2Lm,
           train(with_unl(job(Strategy::kSt2, lambda, &pseudo_lm.model)), both_lm,
                 config.unlabelled_finetune_schedule),
           kLabelled, kBaseline);
  }

  if (config.run_streaming) {
    say("streaming students");
    TrainOutcome sbase = train(job(Strategy::kBaseline, 0.0, nullptr, true), lab,
                               config.student_schedule);
    record(kStreaming, kBaseline, sbase, "", "");
    int32_t best_tau = -1;
    double best_dev = std::numeric_limits<double>::infinity();
    TransducerModel best_model = sbase.model;
    for (int32_t tau : config.TauSweep()) {
      TrainOutcome run = train(job(Strategy::kSt2, lambda, &sbase.model, true, tau), lab,
                               config.finetune_schedule);
      record(kStreaming, TauLabel(tau), run, kStreaming, kBaseline);
      double d = table->Find(kStreaming, TauLabel(tau), seed)->dev_wer;
      if (tau > 0 && d < best_dev) {
        best_dev = d;
        best_tau = tau;
        best_model = run.model;
      }
    }

    if (best_tau > 0) {
      // How much later the delayed student emits than the non-streaming one.
      double lag_sum = 0.0;
      int32_t n = 0;
      for (const Utterance &u : data.dev) {
        Hypothesis s = GreedyDecode(ModelScorer(best_model, u.features));
        Hypothesis ns = GreedyDecode(ModelScorer(st2.model, u.features));
        if (s.tokens.empty() || s.tokens != ns.tokens) continue;
        lag_sum += EmissionLag(s, ns);
        ++n;
      }
      if (n > 0) summary.emission_lag = lag_sum / n;
      summary.lag_utterances = n;
    }

    if (config.run_unlabelled && best_tau > 0) {
      TrainOutcome spseudo = train(job(Strategy::kPseudoOnly, 0.0, nullptr, true), both,
                                   config.unlabelled_schedule);
      record(kStreamingUnlabelled, kPseudo, spseudo, kStreaming, kBaseline);
      StudentJob j = job(Strategy::kSt2, lambda, &spseudo.model, true, best_tau);
      j.use_unlabelled = true;
      record(kStreamingUnlabelled, TauLabel(best_tau),
             train(j, both, config.unlabelled_finetune_schedule), kStreaming, kBaseline);
    }
  }
  return summary;
}

ExperimentResult RunExperiment(const ExperimentConfig &config, const std::string &dir,
                               std::ostream *log) {
  config.Check();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "config.json");
    os << config.ToJson().dump(2) << '\n';
  }
  ExperimentResult result;
  for (uint64_t seed : config.seeds) {
    result.seeds.push_back(RunSeed(config, seed,
                                   (fs::path(dir) / ("seed-" + std::to_string(seed))).string(),
                                   &result.table, log));
  }
  std::ofstream csv(fs::path(dir) / "results.csv", std::ios::binary);
  result.table.WriteCsv(csv);
  std::ofstream txt(fs::path(dir) / "results.txt", std::ios::binary);
  result.table.Render(txt);
  if (!csv || !txt) throw FormatError("cannot write results under " + dir);
  return result;
}

// Trend checks.

namespace {

std::string Pct(double v) { return Fixed(100.0 * v, 2) + "%"; }

// Per-seed a <= b (or a < b when strict) on dev WER.
TrendCheck EverySeed(const std::string &name, const ResultsTable &table,
                     std::span<const uint64_t> seeds, const std::string &setup_a,
                     const std::string &a, const std::string &setup_b,
                     const std::string &b) {
  TrendCheck c{name, true, ""};
  for (uint64_t s : seeds) {
    const ResultRow *ra = table.Find(setup_a, a, s);
    const ResultRow *rb = table.Find(setup_b, b, s);
    if (!ra || !rb) {
      c.pass = false;
      c.detail += " seed " + std::to_string(s) + ": missing row;";
      continue;
    }
    bool ok = ra->dev_wer <= rb->dev_wer;
    c.pass = c.pass && ok;
    c.detail += " seed " + std::to_string(s) + ": " + Pct(ra->dev_wer) + " vs " +
                Pct(rb->dev_wer) + (ok ? ";" : " (violated);");
  }
  return c;
}

TrendCheck SeedMean(const std::string &name, const ResultsTable &table,
                    std::span<const uint64_t> seeds, const std::string &setup_a,
                    const std::string &a, const std::string &setup_b,
                    const std::string &b) {
  TrendCheck c{name, false, ""};
  auto ma = table.MeanDev(setup_a, a, seeds);
  auto mb = table.MeanDev(setup_b, b, seeds);
  if (!ma || !mb) {
    c.detail = " missing rows";
    return c;
  }
  c.pass = *ma <= *mb;
  c.detail = " seed-mean " + Pct(*ma) + " vs " + Pct(*mb);
  return c;
}

}  // namespace

std::vector<TrendCheck> CheckTableTrends(const ExperimentConfig &config,
                                         const ResultsTable &table) {
  using namespace rows;
  const std::span<const uint64_t> seeds(config.seeds);
  std::vector<TrendCheck> out;
  out.push_back(EverySeed("ST2 KD <= baseline, every seed", table, seeds, kLabelled, kSt2,
                          kLabelled, kBaseline));
  out.push_back(EverySeed("KD with unlabelled data <= pseudo-only, every seed", table,
                          seeds, kUnlabelled, kSt2, kUnlabelled, kPseudo));
  out.push_back(SeedMean("ST2 <= ST1 (labelled)", table, seeds, kLabelled, kSt2, kLabelled,
                         kSt1));
  out.push_back(SeedMean("ST2 <= ST1 (with unlabelled data)", table, seeds, kUnlabelled,
                         kSt2, kUnlabelled, kSt1));
  return out;
}

std::vector<TrendCheck> CheckStreamingTrends(const ExperimentConfig &config,
                                             const ResultsTable &table) {
  using namespace rows;
  const std::span<const uint64_t> seeds(config.seeds);
  std::vector<int32_t> positive;
  bool has_zero = false;
  for (int32_t t : config.TauSweep()) {
    if (t > 0) positive.push_back(t);
    has_zero = has_zero || t == 0;
  }
  std::vector<TrendCheck> out;
  if (positive.empty() || !has_zero) {
    out.push_back({"tau sweep", false, " the sweep needs tau = 0 and some tau > 0"});
    return out;
  }

  TrendCheck delay{"tau=0 worse than the best tau>0, every seed", true, ""};
  for (uint64_t s : seeds) {
    const ResultRow *zero = table.Find(kStreaming, TauLabel(0), s);
    const ResultRow *best = nullptr;
    for (int32_t t : positive) {
      const ResultRow *r = table.Find(kStreaming, TauLabel(t), s);
      if (r && (!best || r->dev_wer < best->dev_wer)) best = r;
    }
    if (!zero || !best) {
      delay.pass = false;
      delay.detail += " seed " + std::to_string(s) + ": missing row;";
      continue;
    }
    bool ok = zero->dev_wer > best->dev_wer;
    delay.pass = delay.pass && ok;
    delay.detail += " seed " + std::to_string(s) + ": " + Pct(zero->dev_wer) + " vs " +
                    Pct(best->dev_wer) + " (" + best->label + ")" +
                    (ok ? ";" : " (violated);");
  }
  out.push_back(delay);

  // The single delay with the best seed-mean dev WER is the operating point.
  std::optional<double> best_mean;
  int32_t best_tau = -1;
  for (int32_t t : positive) {
    auto m = table.MeanDev(kStreaming, TauLabel(t), seeds);
    if (m && (!best_mean || *m < *best_mean)) {
      best_mean = m;
      best_tau = t;
    }
  }
  TrendCheck vs_base{"best tau>0 <= streaming baseline (seed-mean)", false, ""};
  auto base = table.MeanDev(kStreaming, kBaseline, seeds);
  if (!best_mean || !base) {
    vs_base.detail = " missing rows";
  } else {
    vs_base.pass = *best_mean <= *base;
    vs_base.detail = " tau=" + std::to_string(best_tau) + " seed-mean " + Pct(*best_mean) +
                     " vs " + Pct(*base);
  }
  out.push_back(vs_base);
  return out;
}

std::vector<TrendCheck> CheckFusionTrends(const ExperimentConfig &config,
                                          const ResultsTable &table) {
  using namespace rows;
  const std::span<const uint64_t> seeds(config.seeds);
  std::vector<TrendCheck> out;
  out.push_back(SeedMean("fused targets <= unfused KD (labelled)", table, seeds, kLabelled,
                         kSt2Lm, kLabelled, kSt2));
  out.push_back(SeedMean("fused targets and pseudo <= unfused KD (with unlabelled data)",
                         table, seeds, kUnlabelled, kSt2Lm, kUnlabelled, kSt2));
  return out;
}

// Complexity benchmark.

std::vector<BenchShape> DefaultBenchGrid() {
  std::vector<BenchShape> grid;
  for (int32_t t : {16, 32, 64, 128, 256}) grid.push_back({t, t / 4, 12});
  for (int32_t k : {6, 24, 48}) grid.push_back({64, 16, k});
  return grid;
}

std::vector<BenchRow> RunComplexityBench(std::span<const BenchShape> grid,
                                         std::span<const KdVariant> variants,
                                         int32_t repeats, uint64_t seed) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  using Clock = std::chrono::steady_clock;
  std::mt19937_64 rng(seed);
  std::vector<BenchRow> rows;
  for (const BenchShape &shape : grid) {
    const int32_t T = shape.frames, U = shape.labels, K = shape.vocab;
    if (T < 1 || U < 0 || K < 2) throw ConfigError("bad bench shape");
    std::normal_distribution<double> normal(0.0, 1.5);
    auto random_lattice = [&] {
      std::vector<double> logits(static_cast<size_t>(T) * (U + 1) * K);
      for (double &x : logits) x = normal(rng);
      return OutputLattice::FromLogits(T, U, K, logits);
    };
    std::uniform_int_distribution<int32_t> pick(1, K - 1);
    TokenSeq tokens(U);
    for (int32_t &k : tokens) k = pick(rng);
    const OutputLattice teacher = random_lattice();
    const OutputLattice student = random_lattice();

    for (KdVariant v : variants) {
      BenchRow row;
      row.variant = KdVariantName(v);
      row.frames = T;
      row.labels = U;
      row.vocab = K;
      const int64_t nodes = static_cast<int64_t>(T) * (U + 1);
      double sink = 0.0;
      Clock::time_point start;
      switch (v) {
        case KdVariant::kOneBest: {
          KdTargetSet target = MakeOneBestTargets("bench", teacher, tokens);
          row.stored_values = target.StoredValueCount();
          row.expected_values = static_cast<int64_t>(K) * (T + U);
          start = Clock::now();
          for (int32_t r = 0; r < repeats; ++r) {
            sink += KdOneBest(target, student, 0);
            sink += KdOneBestGrad(target, student, 0).Data()[0];
          }
          break;
        }
        case KdVariant::kFullLattice:
          row.stored_values = FullLatticeStoredValueCount(teacher);
          row.expected_values = static_cast<int64_t>(K) * nodes;
          start = Clock::now();
          for (int32_t r = 0; r < repeats; ++r) {
            sink += KdFullLattice(teacher, student);
            sink += KdFullLatticeGrad(teacher, student).Data()[0];
          }
          break;
        case KdVariant::kCollapsed: {
          CollapsedTargetLattice target = CollapseLattice(teacher, tokens);
          row.stored_values = target.StoredValueCount();
          row.expected_values = 3 * nodes;
          start = Clock::now();
          for (int32_t r = 0; r < repeats; ++r) {
            sink += KdCollapsed(target, student, tokens);
            sink += KdCollapsedGrad(target, student, tokens).Data()[0];
          }
          break;
        }
      }
      row.seconds = std::chrono::duration<double>(Clock::now() - start).count() / repeats;
      if (!std::isfinite(sink)) throw NumericError("non-finite loss in benchmark");
      rows.push_back(row);
    }
  }
  return rows;
}

void WriteBenchCsv(std::ostream &os, std::span<const BenchRow> rows) {
  os << "variant,T,U,K,stored_values,expected_values,seconds\n";
  for (const BenchRow &r : rows) {
    os << r.variant << ',' << r.frames << ',' << r.labels << ',' << r.vocab << ','
       << r.stored_values << ',' << r.expected_values << ',' << r.seconds << '\n';
  }
}

double LogLogSlope(std::span<const double> x, std::span<const double> y) {
  Require(x.size() == y.size() && x.size() >= 2, "slope fit needs two or more points");
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    Require(x[i] > 0.0 && y[i] > 0.0, "slope fit needs positive values");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  Require(sxx > 0.0, "slope fit needs distinct x values");
  return sxy / sxx;
}

}  // namespace tdkd

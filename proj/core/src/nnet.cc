// core/src/nnet.cc

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

#include "tdkd/nnet.h"

#include <cmath>
#include <fstream>
#include <random>

#include "tdkd/binary-io.h"
#include "tdkd/errors.h"
#include "tdkd/log-math.h"

namespace tdkd {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using GradMatrix = Eigen::Map<MatrixXd>;
using GradVector = Eigen::Map<VectorXd>;

GradMatrix GradMat(std::span<double> grad, const ParamBlock &b) {
  return GradMatrix(grad.data() + b.offset, b.rows, b.cols);
}

GradVector GradVec(std::span<double> grad, const ParamBlock &b) {
  return GradVector(grad.data() + b.offset, b.rows);
}

MatrixXd SpliceFrames(const FeatureMatrix &x, int32_t lookahead) {
  const Eigen::Index T = x.rows(), d = x.cols();
  MatrixXd out = MatrixXd::Zero(d * (lookahead + 1), T);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int32_t w = 0; w <= lookahead && t + w < T; ++w)
      out.col(t).segment(w * d, d) = x.row(t + w).transpose();
  return out;
}

// h_t = tanh(W_in x_t + W_rec h_{t-1} + b), scanning right-to-left if reverse.
MatrixXd RunRnn(const TransducerModel::MatrixMap &w_in,
                const TransducerModel::MatrixMap &w_rec,
                const TransducerModel::VectorMap &bias, const MatrixXd &input,
                bool reverse) {
  const Eigen::Index T = input.cols();
  MatrixXd pre = w_in * input;
  pre.colwise() += bias;
  MatrixXd out(w_rec.rows(), T);
  VectorXd h = VectorXd::Zero(w_rec.rows());
  for (Eigen::Index s = 0; s < T; ++s) {
    Eigen::Index t = reverse ? T - 1 - s : s;
    h = (pre.col(t) + w_rec * h).array().tanh();
    out.col(t) = h;
  }
  return out;
}

// Backprop through RunRnn. Accumulates weight gradients and returns
// d(loss)/d(input) when want_input_grad is set.
MatrixXd RnnBackward(const TransducerModel::MatrixMap &w_in,
                     const TransducerModel::MatrixMap &w_rec,
                     const MatrixXd &input, const MatrixXd &out,
                     const MatrixXd &d_out, bool reverse, GradMatrix d_w_in,
                     GradMatrix d_w_rec, GradVector d_bias,
                     bool want_input_grad) {
  const Eigen::Index T = out.cols(), H = out.rows();
  MatrixXd d_pre(H, T);
  MatrixXd h_prev = MatrixXd::Zero(H, T);
  VectorXd carry = VectorXd::Zero(H);
  for (Eigen::Index s = T - 1; s >= 0; --s) {
    Eigen::Index t = reverse ? T - 1 - s : s;
    VectorXd dp = (d_out.col(t) + carry).array() *
                  (1.0 - out.col(t).array().square());
    carry.noalias() = w_rec.transpose() * dp;
    d_pre.col(t) = dp;
    if (s > 0) h_prev.col(t) = out.col(reverse ? t + 1 : t - 1);
  }
  d_w_in.noalias() += d_pre * input.transpose();
  d_w_rec.noalias() += d_pre * h_prev.transpose();
  d_bias += d_pre.rowwise().sum();
  if (!want_input_grad) return {};
  return w_in.transpose() * d_pre;
}

MatrixXd ConcatRows(const std::vector<MatrixXd> &parts) {
  Eigen::Index rows = 0;
  for (const auto &p : parts) rows += p.rows();
  MatrixXd out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto &p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

}  // namespace

void ModelConfig::Check() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (encoder_hidden < 1 || encoder_layers < 1)
    throw ConfigError("encoder needs at least one layer of width >= 1");
  if (pred_embed < 1 || pred_hidden < 1 || joint_hidden < 1)
    throw ConfigError("prediction/joint sizes must be >= 1");
  if (lookahead < 0) throw ConfigError("lookahead must be >= 0");
  if (streaming && lookahead != 0)
    throw ConfigError("streaming encoders cannot use lookahead");
}

nlohmann::json ModelConfig::ToJson() const {
  nlohmann::ordered_json j;
  j["vocab_size"] = vocab_size;
  j["input_dim"] = input_dim;
  j["encoder_hidden"] = encoder_hidden;
  j["encoder_layers"] = encoder_layers;
  j["streaming"] = streaming;
  j["lookahead"] = lookahead;
  j["pred_embed"] = pred_embed;
  j["pred_hidden"] = pred_hidden;
  j["joint_hidden"] = joint_hidden;
  return nlohmann::json(j);
}

ModelConfig ModelConfig::FromJson(const nlohmann::json &j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.input_dim = j.value("input_dim", c.input_dim);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.streaming = j.value("streaming", c.streaming);
  c.lookahead = j.value("lookahead", c.lookahead);
  c.pred_embed = j.value("pred_embed", c.pred_embed);
  c.pred_hidden = j.value("pred_hidden", c.pred_hidden);
  c.joint_hidden = j.value("joint_hidden", c.joint_hidden);
  c.Check();
  return c;
}

TransducerModel::TransducerModel(const ModelConfig &config) : config_(config) {
  config_.Check();
  BuildLayout();
}

TransducerModel::TransducerModel(const ModelConfig &config, uint64_t seed)
    : TransducerModel(config) {
  std::mt19937_64 rng(seed);
  for (const ParamBlock &b : blocks_) {
    bool is_bias = b.cols == 1 && b.name.ends_with("bias");
    if (is_bias) continue;
    // Embedding columns are selected by a one-hot input: fan-in 1.
    double fan_in = b.name == "pred.embed" ? 1.0 : static_cast<double>(b.cols);
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in),
                                                1.0 / std::sqrt(fan_in));
    for (size_t i = 0; i < b.Size(); ++i) params_[b.offset + i] = dist(rng);
  }
}

void TransducerModel::BuildLayout() {
  size_t offset = 0;
  auto add = [&](std::string name, int32_t rows, int32_t cols) {
    blocks_.push_back({std::move(name), rows, cols, offset});
    offset += blocks_.back().Size();
    return blocks_.size() - 1;
  };
  const ModelConfig &c = config_;
  const int32_t H = c.encoder_hidden;
  int32_t in_dim = c.input_dim * (c.lookahead + 1);
  layout_.encoder.resize(c.encoder_layers);
  for (int32_t l = 0; l < c.encoder_layers; ++l) {
    for (int32_t d = 0; d < c.NumDirections(); ++d) {
      std::string p = "enc." + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      Layout::Rnn rnn;
      rnn.w_in = add(p + ".w_in", H, in_dim);
      rnn.w_rec = add(p + ".w_rec", H, H);
      rnn.bias = add(p + ".bias", H, 1);
      layout_.encoder[l].push_back(rnn);
    }
    in_dim = H * c.NumDirections();
  }
  layout_.embed = add("pred.embed", c.pred_embed, c.vocab_size);
  layout_.pred_w_in = add("pred.w_in", c.pred_hidden, c.pred_embed);
  layout_.pred_w_rec = add("pred.w_rec", c.pred_hidden, c.pred_hidden);
  layout_.pred_bias = add("pred.bias", c.pred_hidden, 1);
  layout_.joint_enc = add("joint.enc", c.joint_hidden, in_dim);
  layout_.joint_pred = add("joint.pred", c.joint_hidden, c.pred_hidden);
  layout_.joint_bias = add("joint.bias", c.joint_hidden, 1);
  layout_.out_w = add("out.w", c.vocab_size, c.joint_hidden);
  layout_.out_bias = add("out.bias", c.vocab_size, 1);
  params_.assign(offset, 0.0);
}

const ParamBlock &TransducerModel::Block(const std::string &name) const {
  for (const ParamBlock &b : blocks_)
    if (b.name == name) return b;
  throw ContractViolation("no parameter block named " + name);
}

TransducerModel::MatrixMap TransducerModel::Mat(size_t i) const {
  const ParamBlock &b = blocks_[i];
  return MatrixMap(params_.data() + b.offset, b.rows, b.cols);
}

TransducerModel::VectorMap TransducerModel::Vec(size_t i) const {
  const ParamBlock &b = blocks_[i];
  return VectorMap(params_.data() + b.offset, b.rows);
}

namespace {

// Encoder forward; fills the tape's encoder fields if given.
MatrixXd RunEncoder(const TransducerModel &model, const FeatureMatrix &features,
                    ForwardTape *tape) {
  const ModelConfig &c = model.Config();
  Require(features.cols() == c.input_dim, "feature dimension mismatch");
  Require(features.rows() >= 1, "utterance has no frames");
  const auto &layout = model.GetLayout();
  MatrixXd input = SpliceFrames(features, c.lookahead);
  MatrixXd layer_in = input;
  std::vector<std::vector<MatrixXd>> enc(c.encoder_layers);
  for (int32_t l = 0; l < c.encoder_layers; ++l) {
    for (int32_t d = 0; d < c.NumDirections(); ++d) {
      const auto &rnn = layout.encoder[l][d];
      enc[l].push_back(RunRnn(model.Mat(rnn.w_in), model.Mat(rnn.w_rec),
                              model.Vec(rnn.bias), layer_in, d == 1));
    }
    layer_in = ConcatRows(enc[l]);
  }
  if (tape) {
    tape->input = std::move(input);
    tape->enc = std::move(enc);
    tape->enc_out = layer_in;
  }
  return layer_in;
}

}  // namespace

Eigen::MatrixXd EncodeFeatures(const TransducerModel &model,
                               const FeatureMatrix &features) {
  return RunEncoder(model, features, nullptr);
}

OutputLattice ForwardLattice(const TransducerModel &model,
                             const FeatureMatrix &features,
                             std::span<const int32_t> tokens,
                             ForwardTape *tape) {
  const ModelConfig &c = model.Config();
  CheckTokenSeq(tokens, c.vocab_size);
  const auto &layout = model.GetLayout();
  const int32_t T = static_cast<int32_t>(features.rows());
  const int32_t U = static_cast<int32_t>(tokens.size());
  const int32_t K = c.vocab_size;

  MatrixXd enc_out = RunEncoder(model, features, tape);

  MatrixXd pred_in(c.pred_embed, U + 1);
  auto embed = model.Mat(layout.embed);
  pred_in.col(0) = embed.col(kBlankId);
  for (int32_t u = 0; u < U; ++u) pred_in.col(u + 1) = embed.col(tokens[u]);
  MatrixXd pred_h = RunRnn(model.Mat(layout.pred_w_in),
                           model.Mat(layout.pred_w_rec),
                           model.Vec(layout.pred_bias), pred_in, false);

  MatrixXd a = model.Mat(layout.joint_enc) * enc_out;
  MatrixXd b = model.Mat(layout.joint_pred) * pred_h;
  b.colwise() += model.Vec(layout.joint_bias);
  auto out_w = model.Mat(layout.out_w);
  auto out_b = model.Vec(layout.out_bias);

  OutputLattice lattice(T, U, K);
  if (tape) tape->joint_h.resize(T);
  for (int32_t t = 0; t < T; ++t) {
    MatrixXd h = (b.colwise() + a.col(t)).array().tanh();
    Eigen::Map<MatrixXd> z(lattice.Frame(t).data(), K, U + 1);
    z.noalias() = out_w * h;
    z.colwise() += out_b;
    for (int32_t u = 0; u <= U; ++u) LogSoftmaxInPlace(lattice.Node(t, u));
    if (tape) tape->joint_h[t] = std::move(h);
  }

  if (tape) {
    tape->param_version = model.Version();
    tape->model = &model;
    tape->num_frames = T;
    tape->tokens.assign(tokens.begin(), tokens.end());
    tape->pred_in = std::move(pred_in);
    tape->pred_h = std::move(pred_h);
  }
  return lattice;
}

void Backward(const TransducerModel &model, const ForwardTape &tape,
              const LatticeGradient &lattice_grad, std::span<double> grad) {
  Require(tape.model == &model && tape.param_version == model.Version(),
          "stale forward tape: parameters changed since the forward pass");
  Require(grad.size() == model.NumParams(), "gradient buffer has wrong size");
  const ModelConfig &c = model.Config();
  const auto &layout = model.GetLayout();
  const auto &blocks = model.Blocks();
  const int32_t T = tape.num_frames;
  const int32_t U = static_cast<int32_t>(tape.tokens.size());
  const int32_t K = c.vocab_size;
  Require(lattice_grad.NumFrames() == T && lattice_grad.NumLabels() == U &&
              lattice_grad.VocabSize() == K,
          "lattice gradient shape does not match the tape");

  auto out_w = model.Mat(layout.out_w);
  GradMatrix d_out_w = GradMat(grad, blocks[layout.out_w]);
  GradVector d_out_b = GradVec(grad, blocks[layout.out_bias]);

  MatrixXd d_a = MatrixXd::Zero(c.joint_hidden, T);
  MatrixXd d_b = MatrixXd::Zero(c.joint_hidden, U + 1);
  for (int32_t t = 0; t < T; ++t) {
    Eigen::Map<const MatrixXd> d_z(lattice_grad.Frame(t).data(), K, U + 1);
    const MatrixXd &h = tape.joint_h[t];
    d_out_w.noalias() += d_z * h.transpose();
    d_out_b += d_z.rowwise().sum();
    MatrixXd d_pre = (out_w.transpose() * d_z).array() * (1.0 - h.array().square());
    d_a.col(t) = d_pre.rowwise().sum();
    d_b += d_pre;
  }
  GradVec(grad, blocks[layout.joint_bias]) += d_b.rowwise().sum();
  GradMat(grad, blocks[layout.joint_enc]).noalias() += d_a * tape.enc_out.transpose();
  GradMat(grad, blocks[layout.joint_pred]).noalias() += d_b * tape.pred_h.transpose();

  // Prediction network.
  MatrixXd d_pred_h = model.Mat(layout.joint_pred).transpose() * d_b;
  MatrixXd d_pred_in = RnnBackward(
      model.Mat(layout.pred_w_in), model.Mat(layout.pred_w_rec), tape.pred_in,
      tape.pred_h, d_pred_h, false, GradMat(grad, blocks[layout.pred_w_in]),
      GradMat(grad, blocks[layout.pred_w_rec]),
      GradVec(grad, blocks[layout.pred_bias]), true);
  GradMatrix d_embed = GradMat(grad, blocks[layout.embed]);
  d_embed.col(kBlankId) += d_pred_in.col(0);
  for (int32_t u = 0; u < U; ++u) d_embed.col(tape.tokens[u]) += d_pred_in.col(u + 1);

  // Encoder, top layer first.
  MatrixXd d_layer = model.Mat(layout.joint_enc).transpose() * d_a;
  const int32_t H = c.encoder_hidden;
  for (int32_t l = c.encoder_layers - 1; l >= 0; --l) {
    MatrixXd layer_in = l == 0 ? tape.input : ConcatRows(tape.enc[l - 1]);
    MatrixXd d_in;
    for (int32_t d = 0; d < c.NumDirections(); ++d) {
      const auto &rnn = layout.encoder[l][d];
      MatrixXd d_dir = RnnBackward(
          model.Mat(rnn.w_in), model.Mat(rnn.w_rec), layer_in, tape.enc[l][d],
          d_layer.middleRows(d * H, H), d == 1, GradMat(grad, blocks[rnn.w_in]),
          GradMat(grad, blocks[rnn.w_rec]), GradVec(grad, blocks[rnn.bias]),
          l > 0);
      if (l > 0) {
        if (d == 0) {
          d_in = std::move(d_dir);
        } else {
          d_in += d_dir;
        }
      }
    }
    d_layer = std::move(d_in);
  }
}

double SgdStep(TransducerModel &model, std::span<const double> grad, double lr,
               double clip) {
  Require(lr > 0.0, "learning rate must be positive");
  Require(grad.size() == model.NumParams(), "gradient has wrong size");
  double sq = 0.0;
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("non-finite gradient; step refused");
    sq += g * g;
  }
  double norm = std::sqrt(sq);
  double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
  std::span<double> params = model.MutableParams();
  for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * scale * grad[i];
  return norm;
}

void WriteModel(std::ostream &os, const TransducerModel &model) {
  WriteMagic(os, "TDKD");
  WriteU32(os, kCheckpointVersion);
  std::string hyper = model.Config().ToJson().dump();
  WriteU32(os, static_cast<uint32_t>(hyper.size()));
  os.write(hyper.data(), static_cast<std::streamsize>(hyper.size()));
  WriteU64(os, model.NumParams());
  WriteF64Array(os, model.Params());
  if (!os) throw FormatError("failed writing checkpoint");
}

TransducerModel ReadModel(std::istream &is) {
  ExpectMagic(is, "TDKD");
  uint32_t version = ReadU32(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  uint32_t len = ReadU32(is);
  if (len > (1u << 20)) throw FormatError("implausible hyperparameter block");
  std::string hyper(len, '\0');
  if (!is.read(hyper.data(), len)) throw FormatError("truncated checkpoint");
  ModelConfig config;
  try {
    config = ModelConfig::FromJson(nlohmann::json::parse(hyper));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("bad checkpoint hyperparameters: ") + e.what());
  }
  TransducerModel model(config);
  uint64_t n = ReadU64(is);
  if (n != model.NumParams())
    throw FormatError("checkpoint parameter count does not match its config");
  ReadF64Array(is, model.MutableParams());
  return model;
}

void SaveModel(const std::string &path, const TransducerModel &model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  WriteModel(os, model);
}

TransducerModel LoadModel(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path);
  return ReadModel(is);
}

}  // namespace tdkd

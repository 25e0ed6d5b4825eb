// tdkd/nnet.h

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

#ifndef TDKD_NNET_H_
#define TDKD_NNET_H_

#include <Eigen/Dense>

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdkd/lattice.h"

namespace tdkd {

/// T x d acoustic features, one row per frame.
using FeatureMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/*
  Hyperparameters of a small transducer.

  Encoder: each frame is spliced with `lookahead` future frames (zero padded),
  then passed through `encoder_layers` tanh recurrent layers. Non-streaming
  encoders run each layer in both directions and concatenate; streaming
  encoders are strictly left-to-right with no lookahead.

  Prediction network: embedding (row 0 is the start symbol) followed by one
  tanh recurrent layer.

  Joint: logits = W_o tanh(W_f f_t + W_g g_u + b_j) + b_o.
*/
struct ModelConfig {
  int32_t vocab_size = 12;
  int32_t input_dim = 8;
  int32_t encoder_hidden = 16;
  int32_t encoder_layers = 1;
  bool streaming = false;
  int32_t lookahead = 0;
  int32_t pred_embed = 8;
  int32_t pred_hidden = 16;
  int32_t joint_hidden = 16;

  void Check() const;
  int32_t NumDirections() const { return streaming ? 1 : 2; }
  nlohmann::json ToJson() const;
  static ModelConfig FromJson(const nlohmann::json &j);
  bool operator==(const ModelConfig &) const = default;
};

/// Location of one weight matrix inside the flat parameter vector.
/// Matrices are stored column-major.
struct ParamBlock {
  std::string name;
  int32_t rows = 0;
  int32_t cols = 0;
  size_t offset = 0;
  size_t Size() const { return static_cast<size_t>(rows) * cols; }
};

class TransducerModel {
 public:
  /// Uniform(-s, s) init with s = 1/sqrt(fan-in); biases start at zero.
  TransducerModel(const ModelConfig &config, uint64_t seed);
  /// All-zero parameters.
  explicit TransducerModel(const ModelConfig &config);

  const ModelConfig &Config() const { return config_; }
  std::span<const double> Params() const { return params_; }
  /// Mutable access invalidates previously recorded forward tapes.
  std::span<double> MutableParams() {
    ++version_;
    return params_;
  }
  size_t NumParams() const { return params_.size(); }
  uint64_t Version() const { return version_; }

  const ParamBlock &Block(const std::string &name) const;
  const std::vector<ParamBlock> &Blocks() const { return blocks_; }

  using MatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<const Eigen::VectorXd>;
  MatrixMap Mat(size_t block_index) const;
  VectorMap Vec(size_t block_index) const;

  // Indices into Blocks(), resolved once at construction.
  struct Layout {
    struct Rnn {
      size_t w_in, w_rec, bias;
    };
    std::vector<std::vector<Rnn>> encoder;  // [layer][direction]
    size_t embed, pred_w_in, pred_w_rec, pred_bias;
    size_t joint_enc, joint_pred, joint_bias, out_w, out_bias;
  };
  const Layout &GetLayout() const { return layout_; }

 private:
  void BuildLayout();

  ModelConfig config_;
  std::vector<ParamBlock> blocks_;
  Layout layout_{};
  std::vector<double> params_;
  uint64_t version_ = 0;
};

/// Intermediates recorded by ForwardLattice for Backward.
struct ForwardTape {
  uint64_t param_version = 0;
  const TransducerModel *model = nullptr;
  int32_t num_frames = 0;
  TokenSeq tokens;
  Eigen::MatrixXd input;                            // spliced, one column per frame
  std::vector<std::vector<Eigen::MatrixXd>> enc;    // [layer][dir]: H x T
  Eigen::MatrixXd enc_out;                          // E x T
  Eigen::MatrixXd pred_in;                          // embed x (U+1)
  Eigen::MatrixXd pred_h;                           // P x (U+1)
  std::vector<Eigen::MatrixXd> joint_h;             // per frame: J x (U+1)
};

/// Lattice of log p(k | t, u) for features X (T x d) and labels y.
OutputLattice ForwardLattice(const TransducerModel &model,
                             const FeatureMatrix &features,
                             std::span<const int32_t> tokens,
                             ForwardTape *tape = nullptr);

/// Encoder outputs f_1..f_T as columns (E x T).
Eigen::MatrixXd EncodeFeatures(const TransducerModel &model,
                               const FeatureMatrix &features);

/// Adds d(loss)/d(params) into `grad` given d(loss)/d(logits) for the lattice
/// recorded in `tape`. Throws ContractViolation if the tape is stale.
void Backward(const TransducerModel &model, const ForwardTape &tape,
              const LatticeGradient &lattice_grad, std::span<double> grad);

/// Global-norm clip (when clip > 0) followed by params -= lr * grad.
/// Returns the gradient norm before clipping. Throws NumericError and leaves
/// the model untouched if any gradient entry is non-finite.
double SgdStep(TransducerModel &model, std::span<const double> grad, double lr,
               double clip);

// Checkpoint: "TDKD", u32 version, u32 length + JSON hyperparameters,
// u64 parameter count, float64 parameters (all little-endian).
inline constexpr uint32_t kCheckpointVersion = 1;
void WriteModel(std::ostream &os, const TransducerModel &model);
TransducerModel ReadModel(std::istream &is);
void SaveModel(const std::string &path, const TransducerModel &model);
TransducerModel LoadModel(const std::string &path);

}  // namespace tdkd

#endif  // TDKD_NNET_H_

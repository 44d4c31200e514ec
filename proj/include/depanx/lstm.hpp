#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "depanx/tokenizer.hpp"

namespace depanx {

using Mat = Eigen::MatrixXd;

enum class Precision { F32, F64 };

/// Recurrent language model hyperparameters.
struct LMConfig {
  int vocab_size = 0;
  int embedding_dim = 64;
  int hidden_dim = 128;
  int n_layers = 3;
  double weight_drop_p = 0.0;     // DropConnect on hidden-to-hidden weights
  double embedding_drop_p = 0.0;  // whole-word embedding dropout
  double output_drop_p = 0.0;     // locked dropout on the top layer output
  int bptt_base_len = 70;
  double lr = 10.0;
  double grad_clip = 0.25;
  bool tie_weights = true;
  Precision precision = Precision::F64;
  int batch_size = 16;  // parallel streams per language-model step

  void validate() const;

  int layer_input_dim(int layer) const;
  /// The top layer projects to embedding_dim when weights are tied.
  int layer_hidden_dim(int layer) const;
  int output_dim() const { return layer_hidden_dim(n_layers - 1); }

  bool operator==(const LMConfig&) const = default;
};

void to_json(nlohmann::ordered_json& j, const LMConfig& c);
/// Strict: unknown keys are rejected.
void from_json(const nlohmann::ordered_json& j, LMConfig& c);

struct LstmLayerParams {
  Mat W;  // [4H x I], gate blocks i, f, g, o
  Mat U;  // [4H x H]
  Mat b;  // [4H x 1]
};

/// Encoder and decoder tensors. The embedding is stored [d x V] so each
/// word vector is a contiguous column. With tied weights there is no
/// separate decoder matrix: the decoder reads the embedding storage.
struct LmParams {
  Mat embedding;
  std::vector<LstmLayerParams> layers;
  Mat decoder;       // [V x H_top]; empty when tied
  Mat decoder_bias;  // [V x 1]
  bool tied = false;

  /// All tensors in canonical order with stable names.
  void for_each(const std::function<void(const std::string&, Mat&)>& fn);
  void for_each(const std::function<void(const std::string&, const Mat&)>& fn) const;

  /// Same shapes, all zeros.
  LmParams zeros_like() const;
  std::size_t parameter_count() const;
};

/// Initialization: recurrent weights uniform(+-1/sqrt(H)), forget-gate bias
/// shifted by +1, embeddings uniform(+-0.1), decoder bias zero.
LmParams init_lm_params(const LMConfig& config, std::uint64_t seed);

/// Per-batch dropout masks, pre-scaled by 1/(1-p). Empty members disable
/// the corresponding dropout.
struct DropoutMasks {
  std::vector<Mat> recurrent;  // per layer, shape of U
  Eigen::VectorXd embedding_rows;  // one scale per vocabulary id
  Mat output;  // [H_top x B], shared across time steps
};

/// DropConnect mask: each entry kept with prob 1-p, kept entries 1/(1-p).
Mat weight_drop_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed);
/// Per-word keep/scale factors for embedding dropout.
Eigen::VectorXd embedding_dropout_mask(Eigen::Index vocab_size, double p, std::uint64_t seed);
/// Embedding matrix ([d x V]) with whole words zeroed and survivors rescaled.
Mat embedding_dropout(const Mat& embedding, double p, std::uint64_t seed);

/// Draws every mask enabled in the config for one batch of B streams.
DropoutMasks sample_masks(const LMConfig& config, int batch, std::uint64_t seed,
                          bool recurrent = true, bool embedding = true, bool output = true);

/// Per-layer (h, c), each [H_l x B].
struct HiddenState {
  std::vector<Mat> h;
  std::vector<Mat> c;

  static HiddenState zeros(const LMConfig& config, int batch);
};

struct LayerCache {
  Mat x;       // [I x TB] layer input
  Mat gates;   // [4H x TB] post-activation i, f, g, o
  Mat c;       // [H x TB]
  Mat tanh_c;  // [H x TB]
  Mat h;       // [H x TB]
  Mat h0, c0;  // [H x B] initial state
  Mat U_eff;   // U with the DropConnect mask applied
};

/// Ids are laid out time-major: column t*B + b holds stream b at step t.
struct EncoderTrace {
  int steps = 0;
  int batch = 0;
  std::vector<TokenId> ids;
  std::vector<LayerCache> layers;  // empty when caching is off
  Mat top;  // [H_top x TB] top-layer output after output dropout
};

/// Runs embedding lookup and the LSTM stack. `state` is advanced to the
/// final step. When `step_mask` is given (inference only), streams whose
/// mask is 0 at a step keep their state and that step's output is
/// undefined. Throws on out-of-range ids and non-finite activations.
EncoderTrace encode(const LmParams& params, std::span<const TokenId> ids, int steps, int batch,
                    HiddenState& state, const DropoutMasks& masks, bool keep_cache,
                    const std::vector<char>* step_mask = nullptr);

/// Backpropagates d(loss)/d(top) through the cached trace into `grads`.
/// Layers below `lowest_layer` receive no gradient; the embedding only
/// when `embedding_grad` is set and lowest_layer is 0.
void encode_backward(const LmParams& params, const DropoutMasks& masks, const EncoderTrace& trace,
                     const Mat& d_top, LmParams& grads, int lowest_layer = 0,
                     bool embedding_grad = true);

/// Decoder weights as [V x H_top] (reads the embedding when tied).
Mat decoder_weight(const LmParams& params);

/// Sum of squares across all tensors.
double squared_norm(const LmParams& params);
/// In-place scaling of every tensor.
void scale(LmParams& params, double factor);
/// Rounds every tensor through float32.
void round_to_f32(LmParams& params);

}  // namespace depanx

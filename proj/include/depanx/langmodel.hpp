#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "depanx/checkpoint.hpp"
#include "depanx/corpus.hpp"
#include "depanx/lstm.hpp"
#include "depanx/tokenizer.hpp"

namespace depanx {

/// Variable-length truncated BPTT. With probability p_main a window length
/// is round(Normal(base_len, sigma)), otherwise round(Normal(base_len/2,
/// sigma)); it is then clamped to [min_len, 2*base_len].
struct BpttOptions {
  int base_len = 70;
  double sigma = 5.0;
  double p_main = 0.95;
  int min_len = 5;
  bool jitter = true;  // false: every window is exactly base_len
};

struct BpttWindow {
  std::size_t start = 0;  // first input position
  std::size_t len = 0;    // inputs [start, start+len), targets shifted by one
  double lr_scale = 1.0;  // len / base_len
};

/// Windows tiling the stream's stream_len-1 (input, target) pairs. A tail
/// shorter than min_len is folded into the previous window when that stays
/// within 2*base_len, otherwise the previous window is shortened so the
/// tail reaches min_len.
std::vector<BpttWindow> bptt_windows(std::size_t stream_len, const BpttOptions& options,
                                     std::uint64_t seed);

struct BpttBatch {
  std::vector<TokenId> input;
  std::vector<TokenId> target;
  double lr_scale = 1.0;
};

std::vector<BpttBatch> bptt_batches(std::span<const TokenId> stream, const BpttOptions& options,
                                    std::uint64_t seed);

/// Language-model checkpoint: hyperparameters, vocabulary, tensors.
struct ModelCheckpoint {
  LMConfig config;
  Vocabulary vocab;
  LmParams params;

  Container to_container() const;
  static ModelCheckpoint from_container(const Container& container);
  void save(const std::filesystem::path& path) const;
  static ModelCheckpoint load(const std::filesystem::path& path);
};

/// Header fields shared by every checkpoint kind.
nlohmann::ordered_json checkpoint_header(std::string_view kind, const LMConfig& config,
                                         const Vocabulary& vocab);
void append_params(Container& container, const LmParams& params, Precision precision);
LmParams read_params(const Container& container, const LMConfig& config);
Vocabulary read_vocab(const nlohmann::ordered_json& header);

ModelCheckpoint init_checkpoint(LMConfig config, const Vocabulary& vocab, std::uint64_t seed);

struct LmForward {
  Mat logits;  // [V x steps*batch]
  EncoderTrace trace;
};

LmForward lstm_forward(const LmParams& params, std::span<const TokenId> ids, int steps, int batch,
                       HiddenState& state, const DropoutMasks& masks = {}, bool keep_cache = false);

/// Column-wise log-softmax.
Mat log_softmax(const Mat& logits);

/// Mean next-token negative log-likelihood. When `grads` is non-null the
/// gradient of that mean is accumulated into it.
double lm_loss(const LmParams& params, std::span<const TokenId> ids,
               std::span<const TokenId> targets, int steps, int batch, HiddenState& state,
               const DropoutMasks& masks, LmParams* grads);

/// Scales grads so their global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(LmParams& grads, double max_norm);

/// params -= lr * grads, tensor by tensor.
void sgd_step(LmParams& params, const LmParams& grads, double lr);

struct LmTrainResult {
  ModelCheckpoint checkpoint;
  std::vector<double> epoch_loss;  // token-weighted mean training NLL per epoch
};

/// SGD with global-norm clipping over variable-length BPTT windows on
/// config.batch_size parallel streams. The learning rate of each window is
/// scaled by len/base_len. Serves both the generic pretraining and the
/// domain-adaptation stage; only the stream and the initial checkpoint
/// differ. Throws RuntimeError on a non-finite loss.
LmTrainResult train_lm(const ModelCheckpoint& init, std::span<const TokenId> stream, int epochs,
                       std::uint64_t seed);

/// Summed next-token NLL over the stream, evaluated in consecutive windows
/// of `window` inputs with carried state and no dropout.
double summed_nll(const LmParams& params, std::span<const TokenId> stream, int window);

/// exp(mean next-token NLL). Needs at least two tokens.
double perplexity(const ModelCheckpoint& checkpoint, std::span<const TokenId> stream, int window = 0);

/// Language-model token stream: every session as BOS + tokens (each
/// response terminated by SEP), concatenated in corpus order.
std::vector<TokenId> lm_stream(const Corpus& corpus, const Vocabulary& vocab);
std::vector<TokenId> lm_stream(std::span<const Session* const> sessions, const Vocabulary& vocab);

}  // namespace depanx

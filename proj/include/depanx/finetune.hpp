#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "depanx/corpus.hpp"
#include "depanx/langmodel.hpp"

namespace depanx {

enum class HeadMode { Binary, Regression };

std::string_view to_string(HeadMode mode);
HeadMode parse_head_mode(std::string_view s);  // "binary" | "regression"

/// Slanted triangular schedule.
struct StlrSchedule {
  std::int64_t total_steps = 1;
  double cut_frac = 0.1;
  double ratio = 32.0;
  double lr_max = 0.01;

  void validate() const;
};

/// Learning rate at step t in [0, T]: linear warm-up from lr_max/ratio to
/// lr_max over the first floor(T*cut_frac) steps, then linear decay back.
double stlr(std::int64_t t, const StlrSchedule& schedule);

/// Group k (0 = head, deeper groups later) gets base_lr / layer_decay^k.
std::vector<double> discriminative_lrs(double base_lr, double layer_decay, int n_groups);

/// Groups trainable in a given epoch: {0 .. min(epoch, n_groups-1)}.
std::vector<int> unfreeze_plan(int epoch, int n_groups);

/// [H[:, n-1]; row-wise max; row-wise mean] for H of shape [h x n].
Eigen::VectorXd concat_pool(const Mat& hidden);

struct FinetuneConfig {
  int head_dim = 50;
  int epochs = 6;
  int batch_size = 16;  // sessions per optimizer step
  double lr_max = 0.01;
  double cut_frac = 0.1;
  double ratio = 32.0;
  double layer_decay = 2.6;
  /// Only the last bptt_len positions of a session receive encoder gradients;
  /// pooling always covers the whole session.
  int bptt_len = 200;
  double grad_clip = 1.0;
  double weight_drop_p = 0.0;
  bool gradual_unfreezing = true;

  void validate() const;
  bool operator==(const FinetuneConfig&) const = default;
};

void to_json(nlohmann::ordered_json& j, const FinetuneConfig& c);
/// Strict: unknown keys are rejected.
void from_json(const nlohmann::ordered_json& j, FinetuneConfig& c);

/// Pooled features -> affine -> ReLU -> affine.
struct HeadParams {
  Mat W1;  // [m x 3H]
  Mat b1;  // [m x 1]
  Mat W2;  // [k x m], k = 2 (binary) or 1 (regression)
  Mat b2;  // [k x 1]
};

/// Fine-tuned encoder plus head for one condition.
struct PredictionModel {
  LMConfig lm_config;
  Vocabulary vocab;
  LmParams encoder;  // decoder tensors unused
  HeadParams head;
  HeadMode mode = HeadMode::Binary;
  Condition condition = Condition::Phq;
  double target_mean = 0.0;  // regression targets are standardized
  double target_std = 1.0;

  /// Number of layer groups: head, LSTM layers top to bottom, embedding.
  int n_groups() const { return static_cast<int>(encoder.layers.size()) + 2; }

  Container to_container() const;
  static PredictionModel from_container(const Container& container);
  void save(const std::filesystem::path& path) const;
  static PredictionModel load(const std::filesystem::path& path);
};

struct FinetuneResult {
  PredictionModel model;
  std::vector<double> epoch_loss;
};

/// Converts the adapted language model into a classifier (binary: softmax
/// cross-entropy on binarized labels) or regressor (squared error on
/// standardized raw scores) trained on the corpus's train split with STLR,
/// discriminative learning rates and gradual unfreezing. Deterministic for
/// a seed and independent of `threads`.
FinetuneResult train_classifier(const ModelCheckpoint& adapted, const Corpus& corpus,
                                Condition condition, HeadMode mode, const FinetuneConfig& config,
                                std::uint64_t seed, unsigned threads = 1);

/// Throws when a model's vocabulary differs from the one a corpus was
/// encoded with.
void require_vocab_hash(const Vocabulary& model_vocab, std::string_view expected_hash);

/// Model input for a session: its tokens (responses separated by <sep>).
std::vector<TokenId> session_ids(const Session& session, const Vocabulary& vocab);

/// Positive-class probability (binary) or score estimate (regression).
/// Padding ids are skipped. Throws on an empty sequence.
double predict(const PredictionModel& model, std::span<const TokenId> ids);
double predict(const PredictionModel& model, const Session& session);

/// Padded batch evaluation; matches predict() per sequence.
std::vector<double> predict_batch(const PredictionModel& model,
                                  const std::vector<std::vector<TokenId>>& sequences,
                                  int batch_size = 32);

/// Predictions for many sessions, parallel across sessions.
std::vector<double> predict_sessions(const PredictionModel& model,
                                     std::span<const Session* const> sessions, unsigned threads = 1);

/// Incremental predictor: push one token at a time and read the prediction
/// for the prefix seen so far. Pooling covers the whole prefix.
class StreamingPredictor {
 public:
  explicit StreamingPredictor(const PredictionModel& model);
  double push(TokenId id);
  std::size_t length() const { return count_; }

 private:
  const PredictionModel* model_;
  HiddenState state_;
  Eigen::VectorXd max_;
  Eigen::VectorXd sum_;
  std::size_t count_ = 0;
};

/// Head forward on pooled features: raw outputs before softmax/unscaling.
Eigen::VectorXd head_forward(const HeadParams& head, const Eigen::VectorXd& pooled);
/// Maps raw head outputs to the model's prediction.
double head_output(const PredictionModel& model, const Eigen::VectorXd& raw);

/// Loss of one example and its gradient with respect to the head and the
/// pooled features (for tests and the trainer).
struct HeadLoss {
  double loss = 0;
  HeadParams grad;
  Eigen::VectorXd d_pooled;
};
HeadLoss head_loss(const HeadParams& head, HeadMode mode, const Eigen::VectorXd& pooled,
                   double target);

struct ModelGrads {
  LmParams encoder;
  HeadParams head;
};

/// Loss of one session (target 0/1 for binary, standardized score for
/// regression). With `grads`, accumulates gradients: encoder layers below
/// `lowest_layer` are skipped, the embedding only when `embedding_grad`,
/// and only the last `bptt_len` positions backpropagate into the encoder.
/// lowest_layer = n_layers means head only.
double session_loss(const PredictionModel& model, std::span<const TokenId> ids, double target,
                    const DropoutMasks& masks, ModelGrads* grads, int lowest_layer = 0,
                    bool embedding_grad = true, int bptt_len = 0);

}  // namespace depanx

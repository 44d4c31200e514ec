#include "depanx/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "depanx/error.hpp"
#include "depanx/parallel.hpp"
#include "depanx/random.hpp"

namespace depanx {
namespace {

template <class T>
void read_key(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("E_CONFIG",
                            std::string("finetune config key '") + key + "' has the wrong type");
    }
  }
}

void fill_uniform(Mat& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
}

void for_each_head(HeadParams& h, const std::function<void(const std::string&, Mat&)>& fn) {
  fn("head.W1", h.W1);
  fn("head.b1", h.b1);
  fn("head.W2", h.W2);
  fn("head.b2", h.b2);
}

HeadParams zeros_like(const HeadParams& h) {
  HeadParams z{Mat::Zero(h.W1.rows(), h.W1.cols()), Mat::Zero(h.b1.rows(), 1),
               Mat::Zero(h.W2.rows(), h.W2.cols()), Mat::Zero(h.b2.rows(), 1)};
  return z;
}

bool is_encoder_tensor(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

std::vector<TokenId> strip_padding(std::span<const TokenId> ids) {
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id != Vocabulary::kPad) out.push_back(id);
  }
  return out;
}

HiddenState zero_state(const LmParams& p, int batch) {
  HiddenState s;
  for (const auto& layer : p.layers) {
    s.h.push_back(Mat::Zero(layer.U.cols(), batch));
    s.c.push_back(Mat::Zero(layer.U.cols(), batch));
  }
  return s;
}

// Layer group of an encoder tensor: LSTM layer l (of L) is group L - l,
// the embedding is group L + 1.
int group_of(const std::string& name, int n_layers) {
  if (name == "encoder.embedding") return n_layers + 1;
  const auto rest = name.substr(std::string("encoder.lstm.").size());
  return n_layers - std::stoi(rest.substr(0, rest.find('.')));
}

}  // namespace

std::string_view to_string(HeadMode mode) {
  return mode == HeadMode::Binary ? "binary" : "regression";
}

HeadMode parse_head_mode(std::string_view s) {
  if (s == "binary") return HeadMode::Binary;
  if (s == "regression") return HeadMode::Regression;
  throw ValidationError("E_MODE", "mode must be binary or regression, got '" + std::string(s) + "'");
}

void StlrSchedule::validate() const {
  if (total_steps < 1) throw ValidationError("E_SCHEDULE", "total_steps must be >= 1");
  if (!(cut_frac > 0 && cut_frac < 1)) throw ValidationError("E_SCHEDULE", "cut_frac must lie in (0,1)");
  if (!(ratio > 1)) throw ValidationError("E_SCHEDULE", "ratio must exceed 1");
  if (!(lr_max > 0)) throw ValidationError("E_SCHEDULE", "lr_max must be positive");
}

double stlr(std::int64_t t, const StlrSchedule& s) {
  s.validate();
  if (t < 0 || t > s.total_steps) {
    throw ValidationError("E_SCHEDULE", "step " + std::to_string(t) + " outside [0, " +
                                            std::to_string(s.total_steps) + "]");
  }
  const auto cut = static_cast<std::int64_t>(std::floor(static_cast<double>(s.total_steps) * s.cut_frac));
  double p = 0;
  if (cut == 0) {
    // Too few steps for a warm-up: decay straight from the peak.
    p = 1.0 - static_cast<double>(t) / static_cast<double>(s.total_steps);
  } else if (t < cut) {
    p = static_cast<double>(t) / static_cast<double>(cut);
  } else {
    p = 1.0 - static_cast<double>(t - cut) / (static_cast<double>(cut) * (1.0 / s.cut_frac - 1.0));
  }
  return s.lr_max * (1.0 + p * (s.ratio - 1.0)) / s.ratio;
}

std::vector<double> discriminative_lrs(double base_lr, double layer_decay, int n_groups) {
  if (!(layer_decay > 0)) throw ValidationError("E_CONFIG", "layer_decay must be positive");
  if (n_groups < 1) throw ValidationError("E_CONFIG", "need at least one layer group");
  std::vector<double> out(static_cast<std::size_t>(n_groups));
  for (int k = 0; k < n_groups; ++k) out[static_cast<std::size_t>(k)] = base_lr / std::pow(layer_decay, k);
  return out;
}

std::vector<int> unfreeze_plan(int epoch, int n_groups) {
  if (epoch < 0) throw ValidationError("E_CONFIG", "epoch must be >= 0");
  std::vector<int> out(static_cast<std::size_t>(std::min(epoch + 1, n_groups)));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

Eigen::VectorXd concat_pool(const Mat& hidden) {
  if (hidden.cols() == 0) throw ValidationError("E_EMPTY", "cannot pool an empty sequence");
  const Eigen::Index h = hidden.rows();
  Eigen::VectorXd out(3 * h);
  out.head(h) = hidden.col(hidden.cols() - 1);
  out.segment(h, h) = hidden.rowwise().maxCoeff();
  out.tail(h) = hidden.rowwise().mean();
  return out;
}

void FinetuneConfig::validate() const {
  if (head_dim <= 0) throw ValidationError("E_CONFIG", "head_dim must be positive");
  if (epochs < 1) throw ValidationError("E_CONFIG", "finetune epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("E_CONFIG", "finetune batch_size must be >= 1");
  if (!(layer_decay > 0)) throw ValidationError("E_CONFIG", "layer_decay must be positive");
  if (bptt_len < 1) throw ValidationError("E_CONFIG", "bptt_len must be >= 1");
  if (!(grad_clip > 0)) throw ValidationError("E_CONFIG", "grad_clip must be positive");
  if (!(weight_drop_p >= 0 && weight_drop_p < 1)) {
    throw ValidationError("E_CONFIG", "weight_drop_p must lie in [0,1)");
  }
  StlrSchedule{1, cut_frac, ratio, lr_max}.validate();
}

void to_json(nlohmann::ordered_json& j, const FinetuneConfig& c) {
  j = nlohmann::ordered_json{
      {"head_dim", c.head_dim},         {"epochs", c.epochs},
      {"batch_size", c.batch_size},     {"lr_max", c.lr_max},
      {"cut_frac", c.cut_frac},         {"ratio", c.ratio},
      {"layer_decay", c.layer_decay},   {"bptt_len", c.bptt_len},
      {"grad_clip", c.grad_clip},       {"weight_drop_p", c.weight_drop_p},
      {"gradual_unfreezing", c.gradual_unfreezing},
  };
}

void from_json(const nlohmann::ordered_json& j, FinetuneConfig& c) {
  if (!j.is_object()) throw ValidationError("E_CONFIG", "finetune config must be an object");
  static const std::set<std::string> known = {"head_dim", "epochs", "batch_size", "lr_max",
                                              "cut_frac", "ratio", "layer_decay", "bptt_len",
                                              "grad_clip", "weight_drop_p", "gradual_unfreezing"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ValidationError("E_CONFIG", "unknown finetune config key '" + k + "'");
  }
  read_key(j, "head_dim", c.head_dim);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr_max", c.lr_max);
  read_key(j, "cut_frac", c.cut_frac);
  read_key(j, "ratio", c.ratio);
  read_key(j, "layer_decay", c.layer_decay);
  read_key(j, "bptt_len", c.bptt_len);
  read_key(j, "grad_clip", c.grad_clip);
  read_key(j, "weight_drop_p", c.weight_drop_p);
  read_key(j, "gradual_unfreezing", c.gradual_unfreezing);
}

Container PredictionModel::to_container() const {
  Container c;
  c.header = checkpoint_header("prediction_model", lm_config, vocab);
  c.header["mode"] = to_string(mode);
  c.header["condition"] = to_string(condition);
  c.header["head_dim"] = head.W1.rows();
  c.header["target_mean"] = target_mean;
  c.header["target_std"] = target_std;
  const Dtype dtype = lm_config.precision == Precision::F32 ? Dtype::F32 : Dtype::F64;
  encoder.for_each([&](const std::string& name, const Mat& m) {
    if (is_encoder_tensor(name)) c.tensors.push_back(to_tensor(name, m, dtype));
  });
  auto& h = const_cast<HeadParams&>(head);
  for_each_head(h, [&](const std::string& name, Mat& m) { c.tensors.push_back(to_tensor(name, m, dtype)); });
  return c;
}

PredictionModel PredictionModel::from_container(const Container& c) {
  if (c.header.value("kind", "") != "prediction_model") {
    throw ValidationError("E_CHECKPOINT", "checkpoint is not a prediction model");
  }
  PredictionModel m;
  m.lm_config = c.header.at("config").get<LMConfig>();
  m.vocab = read_vocab(c.header);
  if (static_cast<std::size_t>(m.lm_config.vocab_size) != m.vocab.size()) {
    throw ValidationError("E_CHECKPOINT", "config vocab_size disagrees with the stored vocabulary");
  }
  m.mode = parse_head_mode(c.header.at("mode").get<std::string>());
  m.condition = parse_condition(c.header.at("condition").get<std::string>());
  m.target_mean = c.header.at("target_mean").get<double>();
  m.target_std = c.header.at("target_std").get<double>();
  m.encoder = init_lm_params(m.lm_config, 0).zeros_like();
  m.encoder.for_each([&](const std::string& name, Mat& t) {
    if (!is_encoder_tensor(name)) return;
    const auto& nt = c.tensor(name);
    if (nt.rows != t.rows() || nt.cols != t.cols()) {
      throw ValidationError("E_CHECKPOINT", "tensor '" + name + "' has the wrong shape");
    }
    t = to_matrix(nt);
  });
  for_each_head(m.head, [&](const std::string& name, Mat& t) { t = to_matrix(c.tensor(name)); });
  const auto pooled = 3 * m.lm_config.output_dim();
  const auto outputs = m.mode == HeadMode::Binary ? 2 : 1;
  if (m.head.W1.cols() != pooled || m.head.b1.rows() != m.head.W1.rows() ||
      m.head.W2.cols() != m.head.W1.rows() || m.head.W2.rows() != outputs ||
      m.head.b2.rows() != outputs) {
    throw ValidationError("E_CHECKPOINT", "head tensors have inconsistent shapes");
  }
  return m;
}

void PredictionModel::save(const std::filesystem::path& path) const {
  save_container(to_container(), path);
}

PredictionModel PredictionModel::load(const std::filesystem::path& path) {
  return from_container(load_container(path));
}

void require_vocab_hash(const Vocabulary& model_vocab, std::string_view expected_hash) {
  if (model_vocab.content_hash() != expected_hash) {
    throw ValidationError("E_VOCAB_MISMATCH", "model vocabulary hash " + model_vocab.content_hash() +
                                                  " does not match " + std::string(expected_hash));
  }
}

std::vector<TokenId> session_ids(const Session& session, const Vocabulary& vocab) {
  return vocab.encode(session_tokens(session));
}

Eigen::VectorXd head_forward(const HeadParams& head, const Eigen::VectorXd& pooled) {
  const Eigen::VectorXd z = (head.W1 * pooled + head.b1.col(0)).cwiseMax(0.0);
  return head.W2 * z + head.b2.col(0);
}

double head_output(const PredictionModel& model, const Eigen::VectorXd& raw) {
  if (model.mode == HeadMode::Regression) return model.target_mean + model.target_std * raw[0];
  // Two-way softmax, positive class second.
  return 1.0 / (1.0 + std::exp(raw[0] - raw[1]));
}

HeadLoss head_loss(const HeadParams& head, HeadMode mode, const Eigen::VectorXd& pooled,
                   double target) {
  HeadLoss out;
  const Eigen::VectorXd a = head.W1 * pooled + head.b1.col(0);
  const Eigen::VectorXd z = a.cwiseMax(0.0);
  const Eigen::VectorXd raw = head.W2 * z + head.b2.col(0);
  Eigen::VectorXd d_raw(raw.size());
  if (mode == HeadMode::Binary) {
    const double mx = raw.maxCoeff();
    const double lse = mx + std::log(std::exp(raw[0] - mx) + std::exp(raw[1] - mx));
    const int y = target >= 0.5 ? 1 : 0;
    out.loss = lse - raw[y];
    d_raw[0] = std::exp(raw[0] - lse);
    d_raw[1] = std::exp(raw[1] - lse);
    d_raw[y] -= 1.0;
  } else {
    const double e = raw[0] - target;
    out.loss = 0.5 * e * e;
    d_raw[0] = e;
  }
  out.grad.W2 = d_raw * z.transpose();
  out.grad.b2 = d_raw;
  const Eigen::VectorXd dz = head.W2.transpose() * d_raw;
  const Eigen::VectorXd da = (a.array() > 0).select(dz, 0.0);
  out.grad.W1 = da * pooled.transpose();
  out.grad.b1 = da;
  out.d_pooled = head.W1.transpose() * da;
  return out;
}

double session_loss(const PredictionModel& model, std::span<const TokenId> raw_ids, double target,
                    const DropoutMasks& masks, ModelGrads* grads, int lowest_layer,
                    bool embedding_grad, int bptt_len) {
  const auto ids = strip_padding(raw_ids);
  if (ids.empty()) throw ValidationError("E_EMPTY", "session has no tokens");
  const auto n = static_cast<int>(ids.size());
  const int n_layers = static_cast<int>(model.encoder.layers.size());
  const bool encoder_grad = grads && (lowest_layer < n_layers);
  const int tail = encoder_grad ? (bptt_len > 0 ? std::min(bptt_len, n) : n) : 0;
  const int head_len = n - tail;

  HiddenState state = zero_state(model.encoder, 1);
  const Eigen::Index h = model.encoder.layers.back().U.cols();
  Mat top(h, n);
  if (head_len > 0) {
    auto t = encode(model.encoder, std::span(ids).first(static_cast<std::size_t>(head_len)), head_len,
                    1, state, masks, false);
    top.leftCols(head_len) = t.top;
  }
  EncoderTrace trace;
  if (tail > 0) {
    trace = encode(model.encoder, std::span(ids).last(static_cast<std::size_t>(tail)), tail, 1, state,
                   masks, true);
    top.rightCols(tail) = trace.top;
  }
  const Eigen::VectorXd pooled = concat_pool(top);
  auto hl = head_loss(model.head, model.mode, pooled, target);
  if (!std::isfinite(hl.loss)) throw RuntimeError("E_DIVERGED", "non-finite classifier loss");
  if (!grads) return hl.loss;

  grads->head.W1 += hl.grad.W1;
  grads->head.b1 += hl.grad.b1;
  grads->head.W2 += hl.grad.W2;
  grads->head.b2 += hl.grad.b2;
  if (!encoder_grad) return hl.loss;

  // Route d(pooled) back onto the top-layer outputs of the tail window.
  Mat d_top = Mat::Zero(h, tail);
  const auto& dp = hl.d_pooled;
  d_top.col(tail - 1) += dp.head(h);
  for (Eigen::Index r = 0; r < h; ++r) {
    Eigen::Index arg = 0;
    top.row(r).maxCoeff(&arg);
    if (arg >= head_len) d_top(r, arg - head_len) += dp[h + r];
  }
  d_top.colwise() += dp.tail(h) / static_cast<double>(n);
  encode_backward(model.encoder, masks, trace, d_top, grads->encoder, lowest_layer, embedding_grad);
  return hl.loss;
}

FinetuneResult train_classifier(const ModelCheckpoint& adapted, const Corpus& corpus,
                                Condition condition, HeadMode mode, const FinetuneConfig& config,
                                std::uint64_t seed, unsigned threads) {
  config.validate();
  adapted.config.validate();

  std::vector<std::vector<TokenId>> inputs;
  std::vector<double> raw_targets;
  for (const auto* s : corpus.split(Split::Train)) {
    auto ids = session_ids(*s, adapted.vocab);
    if (ids.empty()) continue;
    inputs.push_back(std::move(ids));
    raw_targets.push_back(mode == HeadMode::Binary ? (is_positive(s->score(condition)) ? 1.0 : 0.0)
                                                   : static_cast<double>(s->score(condition)));
  }
  if (inputs.empty()) throw ValidationError("E_EMPTY", "training split has no sessions");

  PredictionModel model;
  model.lm_config = adapted.config;
  model.vocab = adapted.vocab;
  model.encoder = adapted.params;
  model.mode = mode;
  model.condition = condition;

  std::vector<double> targets = raw_targets;
  if (mode == HeadMode::Binary) {
    const auto pos = std::count(targets.begin(), targets.end(), 1.0);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(targets.size())) {
      throw ValidationError("E_SINGLE_CLASS", std::string("training split has a single ") +
                                                  std::string(to_string(condition)) + " class");
    }
  } else {
    double mean = 0;
    for (double t : targets) mean += t;
    mean /= static_cast<double>(targets.size());
    double var = 0;
    for (double t : targets) var += (t - mean) * (t - mean);
    var /= static_cast<double>(targets.size());
    model.target_mean = mean;
    model.target_std = var > 0 ? std::sqrt(var) : 1.0;
    for (double& t : targets) t = (t - model.target_mean) / model.target_std;
  }

  const int pooled_dim = 3 * adapted.config.output_dim();
  const int outputs = mode == HeadMode::Binary ? 2 : 1;
  {
    Rng rng = make_rng(seed, "finetune.head");
    model.head.W1.resize(config.head_dim, pooled_dim);
    model.head.W2.resize(outputs, config.head_dim);
    fill_uniform(model.head.W1, 1.0 / std::sqrt(static_cast<double>(pooled_dim)), rng);
    fill_uniform(model.head.W2, 1.0 / std::sqrt(static_cast<double>(config.head_dim)), rng);
    model.head.b1 = Mat::Zero(config.head_dim, 1);
    model.head.b2 = Mat::Zero(outputs, 1);
  }
  const bool f32 = adapted.config.precision == Precision::F32;
  auto round_head = [&] {
    for_each_head(model.head, [](const std::string&, Mat& m) { m = m.cast<float>().cast<double>(); });
  };
  if (f32) round_head();

  const int n_layers = static_cast<int>(model.encoder.layers.size());
  const int n_groups = model.n_groups();
  LMConfig mask_config = adapted.config;
  mask_config.weight_drop_p = config.weight_drop_p;
  mask_config.embedding_drop_p = 0;
  mask_config.output_drop_p = 0;

  // Adam moments.
  ModelGrads m1{model.encoder.zeros_like(), zeros_like(model.head)};
  ModelGrads m2 = m1;
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::vector<std::int64_t> group_steps(static_cast<std::size_t>(n_groups), 0);

  const std::size_t n = inputs.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  StlrSchedule sched{static_cast<std::int64_t>(steps_per_epoch) * config.epochs, config.cut_frac,
                     config.ratio, config.lr_max};
  std::int64_t step = 0;

  FinetuneResult result;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const int top_group = config.gradual_unfreezing ? std::min(epoch, n_groups - 1) : n_groups - 1;
    const int lowest_layer = top_group == 0 ? n_layers : n_layers - std::min(top_group, n_layers);
    const bool embedding_grad = top_group >= n_layers + 1;

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(seed, "finetune.shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle);

    double epoch_loss = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      std::vector<ModelGrads> per(count);
      std::vector<double> losses(count);
      parallel_for(count, threads, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        per[k].head = zeros_like(model.head);
        if (top_group > 0) per[k].encoder = model.encoder.zeros_like();
        const auto masks = config.weight_drop_p > 0
                               ? sample_masks(mask_config, 1,
                                              derive_seed(seed, "finetune.masks",
                                                          (static_cast<std::uint64_t>(epoch) << 32) | idx),
                                              true, false, false)
                               : DropoutMasks{};
        losses[k] = session_loss(model, inputs[idx], targets[idx], masks, &per[k], lowest_layer,
                                 embedding_grad, config.bptt_len);
      });

      // Ordered reduction keeps results independent of the thread count.
      ModelGrads g{top_group > 0 ? model.encoder.zeros_like() : LmParams{}, zeros_like(model.head)};
      for (std::size_t k = 0; k < count; ++k) {
        epoch_loss += losses[k];
        g.head.W1 += per[k].head.W1;
        g.head.b1 += per[k].head.b1;
        g.head.W2 += per[k].head.W2;
        g.head.b2 += per[k].head.b2;
        if (top_group > 0) {
          std::vector<Mat*> src;
          per[k].encoder.for_each([&](const std::string&, Mat& m) { src.push_back(&m); });
          std::size_t q = 0;
          g.encoder.for_each([&](const std::string&, Mat& m) { m += *src[q++]; });
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      double sq = 0;
      for_each_head(g.head, [&](const std::string&, Mat& m) {
        m *= inv;
        sq += m.squaredNorm();
      });
      if (top_group > 0) {
        g.encoder.for_each([&](const std::string& name, Mat& m) {
          m *= inv;
          if (is_encoder_tensor(name) && group_of(name, n_layers) <= top_group) sq += m.squaredNorm();
        });
      }
      const double norm = std::sqrt(sq);
      const double clip = norm > config.grad_clip ? config.grad_clip / norm : 1.0;

      const auto lrs = discriminative_lrs(stlr(step, sched), config.layer_decay, n_groups);
      for (int grp = 0; grp <= top_group; ++grp) ++group_steps[static_cast<std::size_t>(grp)];
      auto adam = [&](Mat& param, const Mat& grad, Mat& mom1, Mat& mom2, int grp) {
        const auto t = static_cast<double>(group_steps[static_cast<std::size_t>(grp)]);
        const double lr = lrs[static_cast<std::size_t>(grp)];
        mom1 = beta1 * mom1 + (1 - beta1) * clip * grad;
        mom2 = beta2 * mom2 + (1 - beta2) * (clip * grad).cwiseAbs2();
        const double c1 = 1 - std::pow(beta1, t);
        const double c2 = 1 - std::pow(beta2, t);
        param.array() -= lr * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + adam_eps);
      };
      {
        std::vector<Mat*> gp, p1, p2;
        for_each_head(g.head, [&](const std::string&, Mat& m) { gp.push_back(&m); });
        for_each_head(m1.head, [&](const std::string&, Mat& m) { p1.push_back(&m); });
        for_each_head(m2.head, [&](const std::string&, Mat& m) { p2.push_back(&m); });
        std::size_t q = 0;
        for_each_head(model.head, [&](const std::string&, Mat& m) {
          adam(m, *gp[q], *p1[q], *p2[q], 0);
          ++q;
        });
      }
      if (top_group > 0) {
        std::vector<Mat*> gp, p1, p2;
        g.encoder.for_each([&](const std::string&, Mat& m) { gp.push_back(&m); });
        m1.encoder.for_each([&](const std::string&, Mat& m) { p1.push_back(&m); });
        m2.encoder.for_each([&](const std::string&, Mat& m) { p2.push_back(&m); });
        std::size_t q = 0;
        model.encoder.for_each([&](const std::string& name, Mat& m) {
          const std::size_t k = q++;
          if (!is_encoder_tensor(name)) return;
          const int grp = group_of(name, n_layers);
          if (grp > top_group) return;
          adam(m, *gp[k], *p1[k], *p2[k], grp);
          if (f32) m = m.cast<float>().cast<double>();
        });
      }
      if (f32) round_head();
      ++step;
    }
    epoch_loss /= static_cast<double>(n);
    if (!std::isfinite(epoch_loss)) {
      throw RuntimeError("E_DIVERGED", "classifier training diverged in epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

double predict(const PredictionModel& model, std::span<const TokenId> raw_ids) {
  const auto ids = strip_padding(raw_ids);
  if (ids.empty()) throw ValidationError("E_EMPTY", "cannot predict on an empty token sequence");
  HiddenState state = zero_state(model.encoder, 1);
  const auto n = static_cast<int>(ids.size());
  const auto trace = encode(model.encoder, ids, n, 1, state, {}, false);
  return head_output(model, head_forward(model.head, concat_pool(trace.top)));
}

double predict(const PredictionModel& model, const Session& session) {
  return predict(model, session_ids(session, model.vocab));
}

std::vector<double> predict_batch(const PredictionModel& model,
                                  const std::vector<std::vector<TokenId>>& sequences,
                                  int batch_size) {
  if (batch_size < 1) throw ValidationError("E_CONFIG", "batch_size must be >= 1");
  std::vector<std::vector<TokenId>> clean;
  clean.reserve(sequences.size());
  for (const auto& s : sequences) {
    clean.push_back(strip_padding(s));
    if (clean.back().empty()) throw ValidationError("E_EMPTY", "cannot predict on an empty token sequence");
  }
  std::vector<double> out(sequences.size());
  const Eigen::Index h = model.encoder.layers.back().U.cols();
  for (std::size_t start = 0; start < clean.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), clean.size() - start);
    const auto b = static_cast<int>(count);
    std::size_t steps = 0;
    for (std::size_t k = 0; k < count; ++k) steps = std::max(steps, clean[start + k].size());
    std::vector<TokenId> ids(steps * count, Vocabulary::kPad);
    std::vector<char> mask(steps * count, 0);
    for (std::size_t k = 0; k < count; ++k) {
      const auto& s = clean[start + k];
      for (std::size_t t = 0; t < s.size(); ++t) {
        ids[t * count + k] = s[t];
        mask[t * count + k] = 1;
      }
    }
    HiddenState state = zero_state(model.encoder, b);
    const auto trace = encode(model.encoder, ids, static_cast<int>(steps), b, state, {}, false, &mask);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t len = clean[start + k].size();
      Mat seq(h, static_cast<Eigen::Index>(len));
      for (std::size_t t = 0; t < len; ++t) {
        seq.col(static_cast<Eigen::Index>(t)) = trace.top.col(static_cast<Eigen::Index>(t * count + k));
      }
      out[start + k] = head_output(model, head_forward(model.head, concat_pool(seq)));
    }
  }
  return out;
}

std::vector<double> predict_sessions(const PredictionModel& model,
                                     std::span<const Session* const> sessions, unsigned threads) {
  std::vector<double> out(sessions.size());
  parallel_for(sessions.size(), threads, [&](std::size_t k) { out[k] = predict(model, *sessions[k]); });
  return out;
}

StreamingPredictor::StreamingPredictor(const PredictionModel& model)
    : model_(&model), state_(zero_state(model.encoder, 1)) {}

double StreamingPredictor::push(TokenId id) {
  const TokenId one[1] = {id};
  const auto trace = encode(model_->encoder, one, 1, 1, state_, {}, false);
  const Eigen::VectorXd h = trace.top.col(0);
  if (count_ == 0) {
    max_ = h;
    sum_ = h;
  } else {
    max_ = max_.cwiseMax(h);
    sum_ += h;
  }
  ++count_;
  const Eigen::Index n = h.size();
  Eigen::VectorXd pooled(3 * n);
  pooled << h, max_, sum_ / static_cast<double>(count_);
  return head_output(*model_, head_forward(model_->head, pooled));
}

}  // namespace depanx

#include "depanx/langmodel.hpp"

#include <algorithm>
#include <cmath>

#include "depanx/error.hpp"
#include "depanx/random.hpp"

namespace depanx {

std::vector<BpttWindow> bptt_windows(std::size_t stream_len, const BpttOptions& o,
                                     std::uint64_t seed) {
  if (stream_len < 2) throw ValidationError("E_STREAM", "stream needs at least two tokens");
  if (o.base_len < 5) throw ValidationError("E_CONFIG", "bptt base length must be >= 5");
  const auto max_len = static_cast<std::size_t>(2 * o.base_len);
  const auto min_len = static_cast<std::size_t>(std::max(1, o.min_len));
  Rng rng = make_rng(seed, "lm.bptt");
  std::bernoulli_distribution main_branch(o.p_main);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t pairs = stream_len - 1;
  std::vector<BpttWindow> out;
  std::size_t pos = 0;
  while (pos < pairs) {
    std::size_t len = static_cast<std::size_t>(o.base_len);
    if (o.jitter) {
      const double mean = main_branch(rng) ? o.base_len : o.base_len / 2.0;
      const double draw = std::round(mean + o.sigma * noise(rng));
      len = static_cast<std::size_t>(std::clamp(draw, static_cast<double>(min_len),
                                                static_cast<double>(max_len)));
    }
    const std::size_t remaining = pairs - pos;
    if (len >= remaining) {
      len = remaining;
    } else if (remaining - len < min_len) {
      len = remaining <= max_len ? remaining : remaining - min_len;
    }
    out.push_back({pos, len, static_cast<double>(len) / o.base_len});
    pos += len;
  }
  return out;
}

std::vector<BpttBatch> bptt_batches(std::span<const TokenId> stream, const BpttOptions& options,
                                    std::uint64_t seed) {
  std::vector<BpttBatch> out;
  for (const auto& w : bptt_windows(stream.size(), options, seed)) {
    BpttBatch b;
    b.input.assign(stream.begin() + static_cast<std::ptrdiff_t>(w.start),
                   stream.begin() + static_cast<std::ptrdiff_t>(w.start + w.len));
    b.target.assign(stream.begin() + static_cast<std::ptrdiff_t>(w.start + 1),
                    stream.begin() + static_cast<std::ptrdiff_t>(w.start + w.len + 1));
    b.lr_scale = w.lr_scale;
    out.push_back(std::move(b));
  }
  return out;
}

nlohmann::ordered_json checkpoint_header(std::string_view kind, const LMConfig& config,
                                         const Vocabulary& vocab) {
  nlohmann::ordered_json h;
  h["format"] = "EHLM1";
  h["kind"] = kind;
  h["config"] = config;
  h["vocab_hash"] = vocab.content_hash();
  h["vocab"] = vocab.tokens();
  return h;
}

void append_params(Container& c, const LmParams& params, Precision precision) {
  const Dtype dtype = precision == Precision::F32 ? Dtype::F32 : Dtype::F64;
  params.for_each([&](const std::string& name, const Mat& m) {
    c.tensors.push_back(to_tensor(name, m, dtype));
  });
}

LmParams read_params(const Container& c, const LMConfig& config) {
  LmParams p = init_lm_params(config, 0).zeros_like();
  p.for_each([&](const std::string& name, Mat& m) {
    const auto& t = c.tensor(name);
    if (t.rows != m.rows() || t.cols != m.cols()) {
      throw ValidationError("E_CHECKPOINT", "tensor '" + name + "' has the wrong shape");
    }
    m = to_matrix(t);
  });
  return p;
}

Vocabulary read_vocab(const nlohmann::ordered_json& header) {
  Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
  if (vocab.content_hash() != header.at("vocab_hash").get<std::string>()) {
    throw ValidationError("E_CHECKPOINT", "vocabulary hash mismatch inside checkpoint");
  }
  return vocab;
}

Container ModelCheckpoint::to_container() const {
  Container c;
  c.header = checkpoint_header("language_model", config, vocab);
  append_params(c, params, config.precision);
  return c;
}

ModelCheckpoint ModelCheckpoint::from_container(const Container& c) {
  if (c.header.value("kind", "") != "language_model") {
    throw ValidationError("E_CHECKPOINT", "checkpoint is not a language model");
  }
  ModelCheckpoint ck;
  ck.config = c.header.at("config").get<LMConfig>();
  ck.vocab = read_vocab(c.header);
  if (static_cast<std::size_t>(ck.config.vocab_size) != ck.vocab.size()) {
    throw ValidationError("E_CHECKPOINT", "config vocab_size disagrees with the stored vocabulary");
  }
  ck.params = read_params(c, ck.config);
  return ck;
}

void ModelCheckpoint::save(const std::filesystem::path& path) const {
  save_container(to_container(), path);
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
  return from_container(load_container(path));
}

ModelCheckpoint init_checkpoint(LMConfig config, const Vocabulary& vocab, std::uint64_t seed) {
  config.vocab_size = static_cast<int>(vocab.size());
  config.validate();
  return {config, vocab, init_lm_params(config, seed)};
}

LmForward lstm_forward(const LmParams& params, std::span<const TokenId> ids, int steps, int batch,
                       HiddenState& state, const DropoutMasks& masks, bool keep_cache) {
  LmForward out;
  out.trace = encode(params, ids, steps, batch, state, masks, keep_cache);
  out.logits = decoder_weight(params) * out.trace.top;
  out.logits.colwise() += params.decoder_bias.col(0);
  return out;
}

Mat log_softmax(const Mat& logits) {
  Mat out = logits;
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    const double mx = out.col(k).maxCoeff();
    const double lse = mx + std::log((out.col(k).array() - mx).exp().sum());
    out.col(k).array() -= lse;
  }
  return out;
}

double lm_loss(const LmParams& params, std::span<const TokenId> ids,
               std::span<const TokenId> targets, int steps, int batch, HiddenState& state,
               const DropoutMasks& masks, LmParams* grads) {
  if (targets.size() != ids.size()) throw ValidationError("E_SHAPE", "targets must match inputs");
  auto fwd = lstm_forward(params, ids, steps, batch, state, masks, grads != nullptr);
  const Eigen::Index n = fwd.logits.cols();
  const Eigen::Index vocab = fwd.logits.rows();
  Mat logp = log_softmax(fwd.logits);
  double nll = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const TokenId t = targets[static_cast<std::size_t>(k)];
    if (t < 0 || t >= vocab) throw ValidationError("E_TOKEN_ID", "target id out of range");
    nll -= logp(t, k);
  }
  nll /= static_cast<double>(n);
  if (!std::isfinite(nll)) throw RuntimeError("E_DIVERGED", "non-finite language-model loss");
  if (!grads) return nll;

  Mat d_logits = logp.array().exp().matrix();
  for (Eigen::Index k = 0; k < n; ++k) d_logits(targets[static_cast<std::size_t>(k)], k) -= 1.0;
  d_logits /= static_cast<double>(n);

  Mat d_dec = d_logits * fwd.trace.top.transpose();
  if (params.tied) {
    grads->embedding += d_dec.transpose();
  } else {
    grads->decoder += d_dec;
  }
  grads->decoder_bias.col(0) += d_logits.rowwise().sum();
  const Mat d_top = decoder_weight(params).transpose() * d_logits;
  encode_backward(params, masks, fwd.trace, d_top, *grads);
  return nll;
}

double clip_global_norm(LmParams& grads, double max_norm) {
  const double norm = std::sqrt(squared_norm(grads));
  if (norm > max_norm && norm > 0) scale(grads, max_norm / norm);
  return norm;
}

void sgd_step(LmParams& params, const LmParams& grads, double lr) {
  std::vector<const Mat*> g;
  grads.for_each([&](const std::string&, const Mat& m) { g.push_back(&m); });
  std::size_t k = 0;
  params.for_each([&](const std::string&, Mat& m) { m.noalias() -= lr * *g[k++]; });
}

LmTrainResult train_lm(const ModelCheckpoint& init, std::span<const TokenId> stream, int epochs,
                       std::uint64_t seed) {
  const LMConfig& config = init.config;
  config.validate();
  if (epochs < 0) throw ValidationError("E_CONFIG", "epochs must be >= 0");
  if (stream.size() < 2) throw ValidationError("E_STREAM", "training stream needs at least two tokens");
  LmTrainResult result{init, {}};
  if (epochs == 0) return result;

  const int batch = static_cast<int>(
      std::max<std::size_t>(1, std::min<std::size_t>(config.batch_size, stream.size() / 2)));
  const std::size_t per_stream = stream.size() / static_cast<std::size_t>(batch);
  BpttOptions bptt;
  bptt.base_len = config.bptt_base_len;

  LmParams& params = result.checkpoint.params;
  LmParams grads = params.zeros_like();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto windows =
        bptt_windows(per_stream, bptt, derive_seed(seed, "lm.epoch", static_cast<std::uint64_t>(epoch)));
    HiddenState state = HiddenState::zeros(config, batch);
    double loss_sum = 0;
    double token_count = 0;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const auto& win = windows[w];
      const int steps = static_cast<int>(win.len);
      std::vector<TokenId> ids(win.len * static_cast<std::size_t>(batch));
      std::vector<TokenId> targets(ids.size());
      for (int t = 0; t < steps; ++t) {
        for (int b = 0; b < batch; ++b) {
          const std::size_t src = static_cast<std::size_t>(b) * per_stream + win.start + static_cast<std::size_t>(t);
          ids[static_cast<std::size_t>(t * batch + b)] = stream[src];
          targets[static_cast<std::size_t>(t * batch + b)] = stream[src + 1];
        }
      }
      const auto masks = sample_masks(
          config, batch,
          derive_seed(seed, "lm.masks", (static_cast<std::uint64_t>(epoch) << 32) | w));
      grads.for_each([](const std::string&, Mat& m) { m.setZero(); });
      double loss = 0;
      try {
        loss = lm_loss(params, ids, targets, steps, batch, state, masks, &grads);
      } catch (const RuntimeError& e) {
        throw RuntimeError("E_DIVERGED", "language-model training diverged at epoch " +
                                             std::to_string(epoch) + ", window " + std::to_string(w) +
                                             ": " + e.what());
      }
      clip_global_norm(grads, config.grad_clip);
      sgd_step(params, grads, config.lr * win.lr_scale);
      if (config.precision == Precision::F32) round_to_f32(params);
      loss_sum += loss * static_cast<double>(ids.size());
      token_count += static_cast<double>(ids.size());
    }
    const double epoch_loss = loss_sum / token_count;
    if (!std::isfinite(epoch_loss)) {
      throw RuntimeError("E_DIVERGED", "non-finite loss in epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(epoch_loss);
  }
  return result;
}

double summed_nll(const LmParams& params, std::span<const TokenId> stream, int window) {
  if (stream.size() < 2) throw ValidationError("E_STREAM", "stream needs at least two tokens");
  if (window <= 0) throw ValidationError("E_CONFIG", "window must be positive");
  HiddenState state;
  for (const auto& layer : params.layers) {
    state.h.push_back(Mat::Zero(layer.U.cols(), 1));
    state.c.push_back(Mat::Zero(layer.U.cols(), 1));
  }
  const std::size_t pairs = stream.size() - 1;
  double total = 0;
  for (std::size_t pos = 0; pos < pairs; pos += static_cast<std::size_t>(window)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(window), pairs - pos);
    const double mean = lm_loss(params, stream.subspan(pos, len), stream.subspan(pos + 1, len),
                                static_cast<int>(len), 1, state, {}, nullptr);
    total += mean * static_cast<double>(len);
  }
  return total;
}

double perplexity(const ModelCheckpoint& checkpoint, std::span<const TokenId> stream, int window) {
  if (window <= 0) window = checkpoint.config.bptt_base_len;
  const double nll = summed_nll(checkpoint.params, stream, window);
  return std::exp(nll / static_cast<double>(stream.size() - 1));
}

std::vector<TokenId> lm_stream(std::span<const Session* const> sessions, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (const Session* s : sessions) {
    out.push_back(Vocabulary::kBos);
    const auto ids = vocab.encode(session_tokens(*s));
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<TokenId> lm_stream(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<const Session*> all;
  for (const auto& s : corpus.sessions) all.push_back(&s);
  return lm_stream(all, vocab);
}

}  // namespace depanx

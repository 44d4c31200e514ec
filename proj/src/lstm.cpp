#include "depanx/lstm.hpp"

#include <cmath>
#include <set>

#include "depanx/error.hpp"
#include "depanx/random.hpp"

namespace depanx {
namespace {

void check_prob(double p, const char* name) {
  if (!(p >= 0 && p < 1)) {
    throw ValidationError("E_CONFIG", std::string(name) + " must lie in [0,1)");
  }
}

template <class T>
void read_key(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("E_CONFIG", std::string("lm config key '") + key + "' has the wrong type");
    }
  }
}

Mat sigmoid(const Mat& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

void fill_uniform(Mat& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
}

}  // namespace

void LMConfig::validate() const {
  if (vocab_size <= static_cast<int>(Vocabulary::kReserved)) {
    throw ValidationError("E_CONFIG", "vocab_size must exceed the reserved tokens");
  }
  if (embedding_dim <= 0 || hidden_dim <= 0 || n_layers <= 0) {
    throw ValidationError("E_CONFIG", "model dimensions must be positive");
  }
  check_prob(weight_drop_p, "weight_drop_p");
  check_prob(embedding_drop_p, "embedding_drop_p");
  check_prob(output_drop_p, "output_drop_p");
  if (bptt_base_len < 5) throw ValidationError("E_CONFIG", "bptt_base_len must be >= 5");
  if (!(lr > 0)) throw ValidationError("E_CONFIG", "lr must be positive");
  if (!(grad_clip > 0)) throw ValidationError("E_CONFIG", "grad_clip must be positive");
  if (batch_size <= 0) throw ValidationError("E_CONFIG", "batch_size must be positive");
  if (tie_weights && output_dim() != embedding_dim) {
    throw ValidationError("E_CONFIG", "tied weights need the top layer to match embedding_dim");
  }
}

int LMConfig::layer_input_dim(int layer) const {
  return layer == 0 ? embedding_dim : layer_hidden_dim(layer - 1);
}

int LMConfig::layer_hidden_dim(int layer) const {
  return (tie_weights && layer == n_layers - 1) ? embedding_dim : hidden_dim;
}

void to_json(nlohmann::ordered_json& j, const LMConfig& c) {
  j = nlohmann::ordered_json{
      {"vocab_size", c.vocab_size},
      {"embedding_dim", c.embedding_dim},
      {"hidden_dim", c.hidden_dim},
      {"n_layers", c.n_layers},
      {"weight_drop_p", c.weight_drop_p},
      {"embedding_drop_p", c.embedding_drop_p},
      {"output_drop_p", c.output_drop_p},
      {"bptt_base_len", c.bptt_base_len},
      {"lr", c.lr},
      {"grad_clip", c.grad_clip},
      {"tie_weights", c.tie_weights},
      {"precision", c.precision == Precision::F32 ? "f32" : "f64"},
      {"batch_size", c.batch_size},
  };
}

void from_json(const nlohmann::ordered_json& j, LMConfig& c) {
  if (!j.is_object()) throw ValidationError("E_CONFIG", "lm config must be an object");
  static const std::set<std::string> known = {
      "vocab_size", "embedding_dim", "hidden_dim", "n_layers", "weight_drop_p",
      "embedding_drop_p", "output_drop_p", "bptt_base_len", "lr", "grad_clip",
      "tie_weights", "precision", "batch_size"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ValidationError("E_CONFIG", "unknown lm config key '" + k + "'");
  }
  read_key(j, "vocab_size", c.vocab_size);
  read_key(j, "embedding_dim", c.embedding_dim);
  read_key(j, "hidden_dim", c.hidden_dim);
  read_key(j, "n_layers", c.n_layers);
  read_key(j, "weight_drop_p", c.weight_drop_p);
  read_key(j, "embedding_drop_p", c.embedding_drop_p);
  read_key(j, "output_drop_p", c.output_drop_p);
  read_key(j, "bptt_base_len", c.bptt_base_len);
  read_key(j, "lr", c.lr);
  read_key(j, "grad_clip", c.grad_clip);
  read_key(j, "tie_weights", c.tie_weights);
  read_key(j, "batch_size", c.batch_size);
  if (auto it = j.find("precision"); it != j.end()) {
    const auto p = it->get<std::string>();
    if (p == "f32") {
      c.precision = Precision::F32;
    } else if (p == "f64") {
      c.precision = Precision::F64;
    } else {
      throw ValidationError("E_CONFIG", "precision must be f32 or f64");
    }
  }
}

void LmParams::for_each(const std::function<void(const std::string&, Mat&)>& fn) {
  fn("encoder.embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto prefix = "encoder.lstm." + std::to_string(l) + ".";
    fn(prefix + "W", layers[l].W);
    fn(prefix + "U", layers[l].U);
    fn(prefix + "b", layers[l].b);
  }
  if (!tied) fn("decoder.weight", decoder);
  fn("decoder.bias", decoder_bias);
}

void LmParams::for_each(const std::function<void(const std::string&, const Mat&)>& fn) const {
  const_cast<LmParams*>(this)->for_each(
      [&](const std::string& name, Mat& m) { fn(name, static_cast<const Mat&>(m)); });
}

LmParams LmParams::zeros_like() const {
  LmParams z = *this;
  z.for_each([](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

std::size_t LmParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

LmParams init_lm_params(const LMConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "lm.init");
  LmParams p;
  p.tied = config.tie_weights;
  p.embedding.resize(config.embedding_dim, config.vocab_size);
  fill_uniform(p.embedding, 0.1, rng);
  for (int l = 0; l < config.n_layers; ++l) {
    const int in = config.layer_input_dim(l);
    const int h = config.layer_hidden_dim(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    LstmLayerParams layer;
    layer.W.resize(4 * h, in);
    layer.U.resize(4 * h, h);
    layer.b.resize(4 * h, 1);
    fill_uniform(layer.W, bound, rng);
    fill_uniform(layer.U, bound, rng);
    fill_uniform(layer.b, bound, rng);
    layer.b.block(h, 0, h, 1).array() += 1.0;
    p.layers.push_back(std::move(layer));
  }
  if (!p.tied) {
    p.decoder.resize(config.vocab_size, config.output_dim());
    fill_uniform(p.decoder, 1.0 / std::sqrt(static_cast<double>(config.output_dim())), rng);
  }
  p.decoder_bias = Mat::Zero(config.vocab_size, 1);
  if (config.precision == Precision::F32) round_to_f32(p);
  return p;
}

Mat weight_drop_mask(Eigen::Index rows, Eigen::Index cols, double p, std::uint64_t seed) {
  check_prob(p, "weight drop probability");
  Mat mask = Mat::Ones(rows, cols);
  if (p == 0) return mask;
  Rng rng(seed);
  std::bernoulli_distribution keep(1 - p);
  const double scale_kept = 1.0 / (1 - p);
  for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = keep(rng) ? scale_kept : 0.0;
  return mask;
}

Eigen::VectorXd embedding_dropout_mask(Eigen::Index vocab_size, double p, std::uint64_t seed) {
  check_prob(p, "embedding dropout probability");
  Eigen::VectorXd mask = Eigen::VectorXd::Ones(vocab_size);
  if (p == 0) return mask;
  Rng rng(seed);
  std::bernoulli_distribution keep(1 - p);
  const double scale_kept = 1.0 / (1 - p);
  for (Eigen::Index k = 0; k < vocab_size; ++k) mask[k] = keep(rng) ? scale_kept : 0.0;
  return mask;
}

Mat embedding_dropout(const Mat& embedding, double p, std::uint64_t seed) {
  const auto mask = embedding_dropout_mask(embedding.cols(), p, seed);
  return embedding * mask.asDiagonal();
}

DropoutMasks sample_masks(const LMConfig& config, int batch, std::uint64_t seed, bool recurrent,
                          bool embedding, bool output) {
  DropoutMasks m;
  if (recurrent && config.weight_drop_p > 0) {
    for (int l = 0; l < config.n_layers; ++l) {
      const int h = config.layer_hidden_dim(l);
      m.recurrent.push_back(weight_drop_mask(4 * h, h, config.weight_drop_p,
                                             derive_seed(seed, "mask.weight_drop", static_cast<std::uint64_t>(l))));
    }
  }
  if (embedding && config.embedding_drop_p > 0) {
    m.embedding_rows = embedding_dropout_mask(config.vocab_size, config.embedding_drop_p,
                                              derive_seed(seed, "mask.embedding"));
  }
  if (output && config.output_drop_p > 0) {
    const auto col = weight_drop_mask(config.output_dim(), batch, config.output_drop_p,
                                      derive_seed(seed, "mask.output"));
    m.output = col;
  }
  return m;
}

HiddenState HiddenState::zeros(const LMConfig& config, int batch) {
  HiddenState s;
  for (int l = 0; l < config.n_layers; ++l) {
    s.h.push_back(Mat::Zero(config.layer_hidden_dim(l), batch));
    s.c.push_back(Mat::Zero(config.layer_hidden_dim(l), batch));
  }
  return s;
}

EncoderTrace encode(const LmParams& params, std::span<const TokenId> ids, int steps, int batch,
                    HiddenState& state, const DropoutMasks& masks, bool keep_cache,
                    const std::vector<char>* step_mask) {
  const auto tb = static_cast<std::size_t>(steps) * static_cast<std::size_t>(batch);
  if (ids.size() != tb) throw ValidationError("E_SHAPE", "id count does not match steps x batch");
  if (step_mask && keep_cache) {
    throw ValidationError("E_SHAPE", "step masks are only supported for inference");
  }
  if (step_mask && step_mask->size() != tb) {
    throw ValidationError("E_SHAPE", "step mask size does not match steps x batch");
  }
  const auto vocab = params.embedding.cols();
  const auto n_layers = params.layers.size();
  if (state.h.size() != n_layers) throw ValidationError("E_SHAPE", "hidden state depth mismatch");

  EncoderTrace trace;
  trace.steps = steps;
  trace.batch = batch;
  trace.ids.assign(ids.begin(), ids.end());

  Mat x(params.embedding.rows(), static_cast<Eigen::Index>(tb));
  for (std::size_t k = 0; k < tb; ++k) {
    const TokenId id = ids[k];
    if (id < 0 || id >= vocab) {
      throw ValidationError("E_TOKEN_ID", "token id " + std::to_string(id) + " >= vocabulary size " +
                                              std::to_string(vocab));
    }
    x.col(static_cast<Eigen::Index>(k)) = params.embedding.col(id);
    if (masks.embedding_rows.size() > 0) x.col(static_cast<Eigen::Index>(k)) *= masks.embedding_rows[id];
  }

  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.layers[l];
    const Eigen::Index h = layer.U.cols();
    if (state.h[l].rows() != h || state.h[l].cols() != batch) {
      throw ValidationError("E_SHAPE", "hidden state shape mismatch at layer " + std::to_string(l));
    }
    const bool dropped = l < masks.recurrent.size() && masks.recurrent[l].size() > 0;
    const Mat U_eff = dropped ? Mat(layer.U.cwiseProduct(masks.recurrent[l])) : layer.U;

    Mat pre = layer.W * x;
    pre.colwise() += layer.b.col(0);
    Mat gates(4 * h, static_cast<Eigen::Index>(tb));
    Mat c_all(h, static_cast<Eigen::Index>(tb));
    Mat tc_all(h, static_cast<Eigen::Index>(tb));
    Mat h_all(h, static_cast<Eigen::Index>(tb));
    Mat h_prev = state.h[l];
    Mat c_prev = state.c[l];
    const Mat h0 = h_prev;
    const Mat c0 = c_prev;
    for (int t = 0; t < steps; ++t) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
      Mat a = pre.middleCols(col, batch) + U_eff * h_prev;
      Mat ifo_i = sigmoid(a.topRows(2 * h));
      Mat g = a.middleRows(2 * h, h).array().tanh().matrix();
      Mat o = sigmoid(a.bottomRows(h));
      Mat c = ifo_i.bottomRows(h).cwiseProduct(c_prev) + ifo_i.topRows(h).cwiseProduct(g);
      Mat tc = c.array().tanh().matrix();
      Mat hn = o.cwiseProduct(tc);
      if (step_mask) {
        for (int b = 0; b < batch; ++b) {
          if (!(*step_mask)[static_cast<std::size_t>(col + b)]) {
            hn.col(b) = h_prev.col(b);
            c.col(b) = c_prev.col(b);
          }
        }
      }
      if (keep_cache) {
        gates.block(0, col, 2 * h, batch) = ifo_i;
        gates.block(2 * h, col, h, batch) = g;
        gates.block(3 * h, col, h, batch) = o;
        c_all.middleCols(col, batch) = c;
        tc_all.middleCols(col, batch) = tc;
      }
      h_all.middleCols(col, batch) = hn;
      h_prev = std::move(hn);
      c_prev = std::move(c);
    }
    if (!h_all.allFinite() || !c_prev.allFinite()) {
      throw RuntimeError("E_NONFINITE", "non-finite activation in lstm layer " + std::to_string(l));
    }
    state.h[l] = h_prev;
    state.c[l] = c_prev;
    if (keep_cache) {
      LayerCache cache;
      cache.x = std::move(x);
      cache.gates = std::move(gates);
      cache.c = std::move(c_all);
      cache.tanh_c = std::move(tc_all);
      cache.h = h_all;
      cache.h0 = h0;
      cache.c0 = c0;
      cache.U_eff = U_eff;
      trace.layers.push_back(std::move(cache));
    }
    x = std::move(h_all);
  }
  if (masks.output.size() > 0) {
    for (int t = 0; t < steps; ++t) {
      x.middleCols(static_cast<Eigen::Index>(t) * batch, batch).array() *= masks.output.array();
    }
  }
  trace.top = std::move(x);
  return trace;
}

void encode_backward(const LmParams& params, const DropoutMasks& masks, const EncoderTrace& trace,
                     const Mat& d_top, LmParams& grads, int lowest_layer, bool embedding_grad) {
  if (trace.layers.size() != params.layers.size()) {
    throw ValidationError("E_SHAPE", "backward needs a cached forward trace");
  }
  const int steps = trace.steps;
  const int batch = trace.batch;
  Mat dh_above = d_top;
  if (masks.output.size() > 0) {
    for (int t = 0; t < steps; ++t) {
      dh_above.middleCols(static_cast<Eigen::Index>(t) * batch, batch).array() *= masks.output.array();
    }
  }
  for (int l = static_cast<int>(params.layers.size()) - 1; l >= std::max(lowest_layer, 0); --l) {
    const auto& layer = params.layers[static_cast<std::size_t>(l)];
    const auto& cache = trace.layers[static_cast<std::size_t>(l)];
    const Eigen::Index h = layer.U.cols();
    const Eigen::Index tb = cache.h.cols();
    Mat dA(4 * h, tb);
    Mat dh_next = Mat::Zero(h, batch);
    Mat dc_next = Mat::Zero(h, batch);
    const Mat U_eff_t = cache.U_eff.transpose();
    for (int t = steps - 1; t >= 0; --t) {
      const Eigen::Index col = static_cast<Eigen::Index>(t) * batch;
      const auto i = cache.gates.block(0, col, h, batch).array();
      const auto f = cache.gates.block(h, col, h, batch).array();
      const auto g = cache.gates.block(2 * h, col, h, batch).array();
      const auto o = cache.gates.block(3 * h, col, h, batch).array();
      const auto tc = cache.tanh_c.middleCols(col, batch).array();
      const Mat c_prev = t > 0 ? Mat(cache.c.middleCols(col - batch, batch)) : cache.c0;

      const Eigen::ArrayXXd dh = dh_above.middleCols(col, batch).array() + dh_next.array();
      const Eigen::ArrayXXd dc = dh * o * (1 - tc * tc) + dc_next.array();
      dA.block(0, col, h, batch) = (dc * g * i * (1 - i)).matrix();
      dA.block(h, col, h, batch) = (dc * c_prev.array() * f * (1 - f)).matrix();
      dA.block(2 * h, col, h, batch) = (dc * i * (1 - g * g)).matrix();
      dA.block(3 * h, col, h, batch) = (dh * tc * o * (1 - o)).matrix();
      dc_next = (dc * f).matrix();
      dh_next.noalias() = U_eff_t * dA.middleCols(col, batch);
    }
    Mat h_prev_all(h, tb);
    h_prev_all.leftCols(batch) = cache.h0;
    if (steps > 1) h_prev_all.rightCols(tb - batch) = cache.h.leftCols(tb - batch);

    auto& g = grads.layers[static_cast<std::size_t>(l)];
    g.W.noalias() += dA * cache.x.transpose();
    g.b.col(0) += dA.rowwise().sum();
    Mat dU = dA * h_prev_all.transpose();
    const bool dropped = static_cast<std::size_t>(l) < masks.recurrent.size() &&
                         masks.recurrent[static_cast<std::size_t>(l)].size() > 0;
    if (dropped) {
      g.U += dU.cwiseProduct(masks.recurrent[static_cast<std::size_t>(l)]);
    } else {
      g.U += dU;
    }
    if (l > lowest_layer || (l == 0 && embedding_grad)) {
      Mat dx = layer.W.transpose() * dA;
      if (l > 0) {
        dh_above = std::move(dx);
      } else {
        for (Eigen::Index k = 0; k < tb; ++k) {
          const TokenId id = trace.ids[static_cast<std::size_t>(k)];
          const double s = masks.embedding_rows.size() > 0 ? masks.embedding_rows[id] : 1.0;
          if (s != 0.0) grads.embedding.col(id) += s * dx.col(k);
        }
      }
    }
  }
}

Mat decoder_weight(const LmParams& params) {
  return params.tied ? Mat(params.embedding.transpose()) : params.decoder;
}

double squared_norm(const LmParams& params) {
  double s = 0;
  params.for_each([&](const std::string&, const Mat& m) { s += m.squaredNorm(); });
  return s;
}

void scale(LmParams& params, double factor) {
  params.for_each([&](const std::string&, Mat& m) { m *= factor; });
}

void round_to_f32(LmParams& params) {
  params.for_each([](const std::string&, Mat& m) { m = m.cast<float>().cast<double>(); });
}

}  // namespace depanx

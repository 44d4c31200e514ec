#include <doctest.h>

#include <cmath>
#include <random>

#include "depanx/error.hpp"
#include "depanx/finetune.hpp"
#include "depanx/hashing.hpp"
#include "depanx/synth.hpp"
#include "test_support.hpp"

using namespace depanx;

namespace {

// Pair-counting AUC, kept local so these tests do not lean on the metrics code.
double brute_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

struct Fixture {
  Corpus corpus;
  ModelCheckpoint lm;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto cfg = depanx::testing::small_synth(260);
    cfg.cue_rate = 0.45;
    Fixture out;
    out.corpus = generate_synthetic(cfg, 77);
    std::map<std::string, std::int64_t> counts;
    for (const auto& s : out.corpus.sessions) count_tokens(session_tokens(s), counts);
    LMConfig lm;
    lm.embedding_dim = 12;
    lm.hidden_dim = 16;
    lm.n_layers = 2;
    lm.bptt_base_len = 20;
    lm.batch_size = 8;
    lm.lr = 5.0;
    const auto vocab = build_vocab(counts, 1, 1000);
    const auto init = init_checkpoint(lm, vocab, 1);
    out.lm = train_lm(init, lm_stream(out.corpus, vocab), 2, 2).checkpoint;
    return out;
  }();
  return f;
}

FinetuneConfig quick_config() {
  FinetuneConfig c;
  c.head_dim = 16;
  c.epochs = 6;
  c.batch_size = 8;
  c.lr_max = 0.01;
  c.bptt_len = 40;
  return c;
}

PredictionModel random_model(HeadMode mode, bool tied, std::uint64_t seed) {
  LMConfig lm;
  lm.vocab_size = 11;
  lm.embedding_dim = 4;
  lm.hidden_dim = 5;
  lm.n_layers = 2;
  lm.tie_weights = tied;
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<bos>", "<sep>"};
  for (int k = 4; k < 11; ++k) tokens.push_back("t" + std::to_string(k));
  PredictionModel m;
  m.lm_config = lm;
  m.vocab = Vocabulary(tokens);
  m.encoder = init_lm_params(lm, seed);
  m.mode = mode;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const int in = 3 * lm.output_dim();
  const int k = mode == HeadMode::Binary ? 2 : 1;
  m.head.W1 = Mat::NullaryExpr(6, in, [&] { return u(rng); });
  m.head.b1 = Mat::NullaryExpr(6, 1, [&] { return u(rng); });
  m.head.W2 = Mat::NullaryExpr(k, 6, [&] { return u(rng); });
  m.head.b2 = Mat::NullaryExpr(k, 1, [&] { return u(rng); });
  return m;
}

std::vector<TokenId> random_ids(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> id(1, 10);
  std::vector<TokenId> out(static_cast<std::size_t>(n));
  for (auto& x : out) x = id(rng);
  return out;
}

}  // namespace

TEST_CASE("stlr closed form") {
  StlrSchedule s{1000, 0.1, 32.0, 0.01};
  CHECK(stlr(100, s) == 0.01);
  CHECK(stlr(0, s) == 0.01 / 32);
  CHECK(stlr(1000, s) == doctest::Approx(0.01 / 32).epsilon(1e-15));
  // p = 1 - 450 / 900 = 0.5, lr = 0.01 * 16.5 / 32.
  CHECK(std::abs(stlr(550, s) - 0.00515625) <= 1e-15);
  CHECK_THROWS_AS(stlr(1001, s), ValidationError);
  CHECK_THROWS_AS(stlr(-1, s), ValidationError);

  double prev = 0;
  for (std::int64_t t = 0; t <= 1000; ++t) {
    const double lr = stlr(t, s);
    CHECK(lr <= 0.01);
    if (t > 0) {
      CHECK(std::abs(lr - prev) <= 0.01 * 31 / 32 / 100 + 1e-15);
      if (t <= 100) CHECK(lr > prev);
      if (t > 100) CHECK(lr < prev);
    }
    prev = lr;
  }
  StlrSchedule bad = s;
  bad.ratio = 1;
  CHECK_THROWS_AS(stlr(0, bad), ValidationError);
  bad = s;
  bad.cut_frac = 1;
  CHECK_THROWS_AS(stlr(0, bad), ValidationError);
}

TEST_CASE("discriminative learning rates") {
  const auto lrs = discriminative_lrs(0.01, 2.6, 3);
  REQUIRE(lrs.size() == 3);
  CHECK(lrs[0] == 0.01);
  CHECK(lrs[1] == doctest::Approx(0.01 / 2.6).epsilon(1e-15));
  CHECK(lrs[2] == doctest::Approx(0.01 / 6.76).epsilon(1e-15));
  for (double lr : discriminative_lrs(0.3, 1.0, 5)) CHECK(lr == 0.3);
  const auto many = discriminative_lrs(1.0, 1.7, 8);
  for (std::size_t k = 1; k < many.size(); ++k) CHECK(many[k] <= many[k - 1]);
  CHECK_THROWS_AS(discriminative_lrs(1.0, 0.0, 3), ValidationError);
}

TEST_CASE("gradual unfreezing plan") {
  CHECK(unfreeze_plan(0, 5) == std::vector<int>{0});
  CHECK(unfreeze_plan(2, 5) == std::vector<int>{0, 1, 2});
  CHECK(unfreeze_plan(4, 5) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK(unfreeze_plan(9, 5) == std::vector<int>{0, 1, 2, 3, 4});
  CHECK_THROWS_AS(unfreeze_plan(-1, 5), ValidationError);
}

TEST_CASE("concat pooling") {
  Mat h(2, 2);
  h << 1, 3, 0, 2;
  const auto p = concat_pool(h);
  Eigen::VectorXd expect(6);
  expect << 3, 2, 3, 2, 2, 1;
  CHECK(p == expect);

  Mat one(3, 1);
  one << 0.5, -1, 2;
  Eigen::VectorXd three(9);
  three << one, one, one;
  CHECK(concat_pool(one) == three);
  CHECK_THROWS_AS(concat_pool(Mat(3, 0)), ValidationError);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 1 + trial % 7, cols = 1 + trial % 11;
    Mat m = Mat::NullaryExpr(rows, cols, [&] { return n01(rng); });
    const auto pooled = concat_pool(m);
    REQUIRE(pooled.size() == 3 * rows);
    for (int r = 0; r < rows; ++r) {
      double mx = m(r, 0), sum = 0;
      for (int c = 0; c < cols; ++c) {
        mx = std::max(mx, m(r, c));
        sum += m(r, c);
      }
      CHECK(pooled[r] == m(r, cols - 1));
      CHECK(pooled[rows + r] == mx);
      CHECK(std::abs(pooled[2 * rows + r] - sum / cols) <= 1e-15);
    }
  }
}

TEST_CASE("session loss gradient matches finite differences") {
  for (auto mode : {HeadMode::Binary, HeadMode::Regression}) {
    for (bool tied : {false, true}) {
      auto model = random_model(mode, tied, tied ? 3 : 4);
      std::mt19937_64 rng(9);
      const auto ids = random_ids(rng, 6);
      const double target = mode == HeadMode::Binary ? 1.0 : 0.7;
      ModelGrads g{model.encoder.zeros_like(),
                   {Mat::Zero(model.head.W1.rows(), model.head.W1.cols()), Mat::Zero(model.head.b1.rows(), 1),
                    Mat::Zero(model.head.W2.rows(), model.head.W2.cols()), Mat::Zero(model.head.b2.rows(), 1)}};
      session_loss(model, ids, target, {}, &g);

      double worst = 0;
      const double eps = 1e-5;
      auto probe = [&](Mat& param, const Mat& grad) {
        for (Eigen::Index k = 0; k < param.size(); ++k) {
          const double saved = param.data()[k];
          param.data()[k] = saved + eps;
          const double up = session_loss(model, ids, target, {}, nullptr);
          param.data()[k] = saved - eps;
          const double down = session_loss(model, ids, target, {}, nullptr);
          param.data()[k] = saved;
          const double num = (up - down) / (2 * eps);
          const double a = grad.data()[k];
          worst = std::max(worst, std::abs(a - num) / std::max(std::abs(a) + std::abs(num), 1e-6));
        }
      };
      probe(model.head.W1, g.head.W1);
      probe(model.head.b1, g.head.b1);
      probe(model.head.W2, g.head.W2);
      probe(model.head.b2, g.head.b2);
      std::vector<Mat*> grads;
      g.encoder.for_each([&](const std::string&, Mat& m) { grads.push_back(&m); });
      std::size_t q = 0;
      model.encoder.for_each([&](const std::string& name, Mat& m) {
        const Mat& gm = *grads[q++];
        if (name.rfind("encoder.", 0) == 0) probe(m, gm);
      });
      INFO("mode " << to_string(mode) << " tied " << tied);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("session loss respects frozen layers") {
  auto model = random_model(HeadMode::Binary, false, 5);
  std::mt19937_64 rng(2);
  const auto ids = random_ids(rng, 9);
  ModelGrads g{model.encoder.zeros_like(),
               {Mat::Zero(6, model.head.W1.cols()), Mat::Zero(6, 1), Mat::Zero(2, 6), Mat::Zero(2, 1)}};
  session_loss(model, ids, 0.0, {}, &g, 1, false, 4);
  CHECK(g.encoder.layers[0].W.isZero(0));
  CHECK(g.encoder.layers[0].U.isZero(0));
  CHECK(g.encoder.embedding.isZero(0));
  CHECK_FALSE(g.encoder.layers[1].W.isZero(0));
  CHECK_FALSE(g.head.W1.isZero(0));
}

TEST_CASE("prediction properties") {
  const auto model = random_model(HeadMode::Binary, true, 6);
  std::mt19937_64 rng(1);
  std::vector<std::vector<TokenId>> seqs;
  std::uniform_int_distribution<int> len(1, 25);
  for (int k = 0; k < 10000; ++k) seqs.push_back(random_ids(rng, len(rng)));
  std::vector<double> single;
  for (const auto& s : seqs) {
    const double p = predict(model, s);
    CHECK((p >= 0 && p <= 1));
    single.push_back(p);
  }
  CHECK(predict(model, seqs[3]) == single[3]);
  const auto batched = predict_batch(model, seqs, 37);
  double worst = 0;
  for (std::size_t k = 0; k < seqs.size(); ++k) worst = std::max(worst, std::abs(batched[k] - single[k]));
  CHECK(worst <= 1e-6);

  auto padded = seqs[7];
  padded.push_back(Vocabulary::kSep);
  const double base = predict(model, padded);
  padded.insert(padded.end(), 5, Vocabulary::kPad);
  CHECK(predict(model, padded) == base);

  CHECK_THROWS_AS(predict(model, std::vector<TokenId>{}), ValidationError);
  CHECK_THROWS_AS(predict(model, std::vector<TokenId>{Vocabulary::kPad}), ValidationError);
}

TEST_CASE("streaming predictions equal from-scratch prefix predictions") {
  for (auto mode : {HeadMode::Binary, HeadMode::Regression}) {
    const auto model = random_model(mode, false, 8);
    std::mt19937_64 rng(5);
    const auto ids = random_ids(rng, 60);
    StreamingPredictor stream(model);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double inc = stream.push(ids[k]);
      const double full = predict(model, std::span(ids).first(k + 1));
      CHECK(std::abs(inc - full) <= 1e-6);
    }
    CHECK(stream.length() == 60);
  }
}

TEST_CASE("prediction model container round trip") {
  testing::TempDir dir;
  for (auto mode : {HeadMode::Binary, HeadMode::Regression}) {
    auto model = random_model(mode, mode == HeadMode::Binary, 2);
    model.target_mean = 6.25;
    model.target_std = 4.1;
    model.condition = Condition::Gad;
    model.save(dir / "a.ehlm");
    const auto loaded = PredictionModel::load(dir / "a.ehlm");
    loaded.save(dir / "b.ehlm");
    CHECK(read_file(dir / "a.ehlm") == read_file(dir / "b.ehlm"));
    CHECK(loaded.mode == mode);
    CHECK(loaded.condition == Condition::Gad);
    CHECK(loaded.target_std == 4.1);
    std::vector<TokenId> ids = {4, 5, 6, 3};
    CHECK(predict(loaded, ids) == predict(model, ids));
  }
  const auto lm_file = dir / "lm.ehlm";
  ModelCheckpoint{random_model(HeadMode::Binary, true, 1).lm_config,
                  random_model(HeadMode::Binary, true, 1).vocab,
                  random_model(HeadMode::Binary, true, 1).encoder}
      .save(lm_file);
  CHECK_THROWS_AS(PredictionModel::load(lm_file), ValidationError);
}

TEST_CASE("classifier learns planted cues and unfreezes gradually") {
  const auto& f = fixture();
  auto cfg = quick_config();
  const auto r = train_classifier(f.lm, f.corpus, Condition::Phq, HeadMode::Binary, cfg, 3);
  CHECK(r.epoch_loss.size() == 6);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());

  const auto test = f.corpus.split(Split::Test);
  const auto scores = predict_sessions(r.model, test);
  std::vector<bool> labels;
  for (const auto* s : test) labels.push_back(is_positive(s->phq8));
  CHECK(brute_auc(scores, labels) >= 0.95);

  // Epoch 0 trains the head only, epoch 1 adds the top LSTM layer.
  auto one = cfg;
  one.epochs = 1;
  const auto head_only = train_classifier(f.lm, f.corpus, Condition::Phq, HeadMode::Binary, one, 3);
  CHECK(squared_norm(head_only.model.encoder) == squared_norm(f.lm.params));
  f.lm.params.for_each([&](const std::string& name, const Mat& m) {
    if (name.rfind("encoder.", 0) != 0) return;
    head_only.model.encoder.for_each([&](const std::string& other, const Mat& o) {
      if (other == name) CHECK(o == m);
    });
  });
  auto two = cfg;
  two.epochs = 2;
  const auto top = train_classifier(f.lm, f.corpus, Condition::Phq, HeadMode::Binary, two, 3);
  CHECK(top.model.encoder.embedding == f.lm.params.embedding);
  CHECK(top.model.encoder.layers[0].W == f.lm.params.layers[0].W);
  CHECK(top.model.encoder.layers[0].U == f.lm.params.layers[0].U);
  CHECK(top.model.encoder.layers[0].b == f.lm.params.layers[0].b);
  CHECK(top.model.encoder.layers[1].U != f.lm.params.layers[1].U);
}

TEST_CASE("classifier training is deterministic and thread independent") {
  const auto& f = fixture();
  auto cfg = quick_config();
  cfg.epochs = 3;
  cfg.weight_drop_p = 0.2;
  const auto a = train_classifier(f.lm, f.corpus, Condition::Gad, HeadMode::Binary, cfg, 11, 1);
  const auto b = train_classifier(f.lm, f.corpus, Condition::Gad, HeadMode::Binary, cfg, 11, 3);
  CHECK(encode_container(a.model.to_container()) == encode_container(b.model.to_container()));
  const auto c = train_classifier(f.lm, f.corpus, Condition::Gad, HeadMode::Binary, cfg, 12, 1);
  CHECK(encode_container(a.model.to_container()) != encode_container(c.model.to_container()));
}

TEST_CASE("regression beats the constant-mean predictor") {
  const auto& f = fixture();
  const auto r = train_classifier(f.lm, f.corpus, Condition::Phq, HeadMode::Regression, quick_config(), 5);
  const auto test = f.corpus.split(Split::Test);
  const auto est = predict_sessions(r.model, test);
  double train_mean = 0;
  const auto train = f.corpus.split(Split::Train);
  for (const auto* s : train) train_mean += s->phq8;
  train_mean /= static_cast<double>(train.size());
  double se = 0, base = 0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    se += (est[k] - test[k]->phq8) * (est[k] - test[k]->phq8);
    base += (train_mean - test[k]->phq8) * (train_mean - test[k]->phq8);
  }
  CHECK(std::sqrt(se / test.size()) < std::sqrt(base / test.size()));
}

TEST_CASE("classifier input errors") {
  const auto& f = fixture();
  Corpus negatives;
  for (const auto& s : f.corpus.sessions) {
    if (!is_positive(s.gad7)) negatives.sessions.push_back(s);
  }
  CHECK_THROWS_AS(train_classifier(f.lm, negatives, Condition::Gad, HeadMode::Binary, quick_config(), 1),
                  ValidationError);
  CHECK_THROWS_AS(require_vocab_hash(f.lm.vocab, "deadbeef"), ValidationError);
  CHECK_NOTHROW(require_vocab_hash(f.lm.vocab, f.lm.vocab.content_hash()));
  auto bad = quick_config();
  bad.epochs = 0;
  CHECK_THROWS_AS(train_classifier(f.lm, f.corpus, Condition::Gad, HeadMode::Binary, bad, 1),
                  ValidationError);
  nlohmann::ordered_json j = {{"head_dim", 5}, {"bogus", 1}};
  CHECK_THROWS_AS(j.get<FinetuneConfig>(), ValidationError);
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "depanx/error.hpp"
#include "depanx/variability.hpp"
#include "test_support.hpp"

using namespace depanx;

namespace {

PredictionModel random_model(std::uint64_t seed) {
  LMConfig lm;
  lm.vocab_size = 40;
  lm.embedding_dim = 6;
  lm.hidden_dim = 8;
  lm.n_layers = 2;
  std::vector<std::string> tokens = {"<pad>", "<unk>", "<bos>", "<sep>"};
  for (int k = 4; k < 40; ++k) tokens.push_back("t" + std::to_string(k));
  PredictionModel m;
  m.lm_config = lm;
  m.vocab = Vocabulary(tokens);
  m.encoder = init_lm_params(lm, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  m.head.W1 = Mat::NullaryExpr(10, 3 * lm.output_dim(), [&] { return u(rng); });
  m.head.b1 = Mat::NullaryExpr(10, 1, [&] { return u(rng); });
  m.head.W2 = Mat::NullaryExpr(2, 10, [&] { return u(rng); });
  m.head.b2 = Mat::NullaryExpr(2, 1, [&] { return u(rng); });
  return m;
}

double two_pass_std(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

}  // namespace

TEST_CASE("gated predictions match prefix predictions") {
  const auto model = random_model(3);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> id(3, 39), len(1, 80);
  double worst = 0;
  for (int s = 0; s < 50; ++s) {
    std::vector<TokenId> ids(static_cast<std::size_t>(len(rng)));
    for (auto& x : ids) x = id(rng);
    const auto trace = gated_predictions(model, ids);
    REQUIRE(trace.scores.size() == ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      worst = std::max(worst, std::abs(trace.scores[k] - predict(model, std::span(ids).first(k + 1))));
      CHECK((trace.scores[k] >= 0 && trace.scores[k] <= 1));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("gated prediction counts") {
  const auto model = random_model(4);
  std::vector<TokenId> long_session(800, 7);
  for (std::size_t k = 0; k < long_session.size(); k += 9) long_session[k] = Vocabulary::kSep;
  CHECK(gated_predictions(model, long_session).scores.size() == 800);
  CHECK(gated_predictions(model, std::vector<TokenId>{5}).scores.size() == 1);
  CHECK_THROWS_AS(gated_predictions(model, std::vector<TokenId>{}), ValidationError);

  Session s;
  s.session_id = "x";
  s.responses = {{"p1", "t4 t5 t6"}, {"p2", "t7 zz"}};
  const auto trace = gated_predictions(model, s);
  CHECK(trace.session_id == "x");
  CHECK(trace.scores.size() == session_tokens(s).size());
  CHECK(trace.scores.size() == 7);
}

TEST_CASE("ws_variability") {
  CHECK(ws_variability(std::vector<double>(10, 0.3)) == 0.0);
  CHECK(ws_variability(std::vector<double>{0.0, 1.0}) == 0.5);
  CHECK(ws_variability(std::vector<double>{0.42}) == 0.0);
  CHECK_THROWS_AS(ws_variability(std::vector<double>{}), ValidationError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(100);
    for (auto& v : x) v = u(rng);
    CHECK(std::abs(ws_variability(x) - two_pass_std(x)) <= 1e-12);
    std::vector<double> rev(x.rbegin(), x.rend());
    CHECK(std::abs(ws_variability(rev) - ws_variability(x)) <= 1e-15);
    CHECK(ws_variability(x) <= 0.5);
  }
}

TEST_CASE("variability by quadrant") {
  const auto model = random_model(5);
  auto cfg = depanx::testing::small_synth(150);
  const auto corpus = generate_synthetic(cfg, 12);
  std::vector<const Session*> all;
  for (const auto& s : corpus.sessions) all.push_back(&s);

  // Corpus words map to <unk> under this model; the counts still have to
  // agree with the quadrant table.
  std::vector<PredictionTrace> traces;
  const auto table = variability_by_quadrant(model, all, 2, &traces);
  const auto quad = quadrants(score_pairs(corpus));
  for (int q = 0; q < 4; ++q) {
    CHECK(static_cast<std::int64_t>(table.count[static_cast<std::size_t>(q)]) ==
          quad.count(static_cast<Quadrant>(q)));
  }
  CHECK(table.total() == all.size());
  std::size_t total_predictions = 0, total_tokens = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    total_predictions += traces[k].scores.size();
    total_tokens += session_tokens(*all[k]).size();
  }
  CHECK(total_predictions == total_tokens);

  auto reversed = all;
  std::reverse(reversed.begin(), reversed.end());
  const auto again = variability_by_quadrant(model, reversed, 1);
  for (std::size_t q = 0; q < 4; ++q) {
    CHECK(again.count[q] == table.count[q]);
    if (table.mean[q]) CHECK(std::abs(*again.mean[q] - *table.mean[q]) <= 1e-12);
  }

  std::vector<double> flat(all.size(), 0.07);
  const auto same = tabulate_variability(Condition::Phq, all, flat);
  for (std::size_t q = 0; q < 4; ++q) {
    if (same.count[q]) CHECK(*same.mean[q] == doctest::Approx(0.07).epsilon(1e-14));
  }
  CHECK(overall_mean(same) == doctest::Approx(0.07).epsilon(1e-14));
}

TEST_CASE("empty quadrants are absent") {
  Session a;
  a.session_id = "a";
  a.phq8 = 20;
  a.gad7 = 15;
  Session b = a;
  b.session_id = "b";
  b.phq8 = 1;
  b.gad7 = 1;
  std::vector<const Session*> two = {&a, &b};
  const auto t = tabulate_variability(Condition::Gad, two, std::vector<double>{0.2, 0.1});
  CHECK(t.mean[static_cast<std::size_t>(Quadrant::PosPos)] == 0.2);
  CHECK(t.mean[static_cast<std::size_t>(Quadrant::NegNeg)] == 0.1);
  CHECK_FALSE(t.mean[static_cast<std::size_t>(Quadrant::PosNeg)].has_value());
  CHECK_FALSE(t.mean[static_cast<std::size_t>(Quadrant::NegPos)].has_value());
}

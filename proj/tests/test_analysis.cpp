#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "depanx/analysis.hpp"
#include "depanx/error.hpp"
#include "depanx/hashing.hpp"
#include "depanx/synth.hpp"
#include "test_support.hpp"

using namespace depanx;

namespace {

std::vector<ScorePair> from_quadrant_counts(std::int64_t pp, std::int64_t pn, std::int64_t np,
                                            std::int64_t nn) {
  std::vector<ScorePair> v;
  for (std::int64_t i = 0; i < pp; ++i) v.push_back({12, 11});
  for (std::int64_t i = 0; i < pn; ++i) v.push_back({10, 3});
  for (std::int64_t i = 0; i < np; ++i) v.push_back({2, 15});
  for (std::int64_t i = 0; i < nn; ++i) v.push_back({0, 9});
  return v;
}

// Pearson over explicit pairs, the expanded-list oracle.
double pairs_pearson(const std::vector<ScorePair>& v) {
  double mx = 0, my = 0;
  for (const auto& p : v) {
    mx += p.phq;
    my += p.gad;
  }
  mx /= static_cast<double>(v.size());
  my /= static_cast<double>(v.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : v) {
    sxx += (p.phq - mx) * (p.phq - mx);
    syy += (p.gad - my) * (p.gad - my);
    sxy += (p.phq - mx) * (p.gad - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

JointCountMatrix printed_matrix() {
  const auto text = read_file(std::string(DEPANX_SOURCE_DIR) + "/data/fig3_joint_counts.csv");
  return ingest_matrix_csv(text).matrix;
}

}  // namespace

TEST_CASE("quadrants on the published label distribution") {
  const auto full = quadrants(from_quadrant_counts(2964, 1295, 988, 10703));
  CHECK(full.total == 15950);
  CHECK(truncated_percent(full.fraction(Quadrant::PosPos)) == doctest::Approx(18.5));
  CHECK(truncated_percent(full.fraction(Quadrant::PosNeg)) == doctest::Approx(8.1));
  CHECK(truncated_percent(full.fraction(Quadrant::NegPos)) == doctest::Approx(6.1));
  CHECK(truncated_percent(full.fraction(Quadrant::NegNeg)) == doctest::Approx(67.1));

  const auto test = quadrants(from_quadrant_counts(455, 198, 163, 2262));
  CHECK(test.total == 3078);
  CHECK(truncated_percent(test.fraction(Quadrant::PosPos)) == doctest::Approx(14.7));
  CHECK(truncated_percent(test.fraction(Quadrant::PosNeg)) == doctest::Approx(6.4));
  CHECK(truncated_percent(test.fraction(Quadrant::NegPos)) == doctest::Approx(5.2));
  CHECK(truncated_percent(test.fraction(Quadrant::NegNeg)) == doctest::Approx(73.4));
}

TEST_CASE("quadrant edge cases") {
  std::vector<ScorePair> zeros(10, {0, 0});
  const auto t = quadrants(zeros);
  CHECK(t.fraction(Quadrant::NegNeg) == 1.0);
  CHECK_THROWS_AS(quadrants(std::vector<ScorePair>{}), ValidationError);
  CHECK_THROWS_AS(quadrants(std::vector<ScorePair>{{25, 0}}), ValidationError);
}

TEST_CASE("quadrants are permutation invariant and agree with label-based counting") {
  const auto corpus = generate_synthetic(depanx::testing::small_synth(300), 4);
  auto pairs = score_pairs(corpus);
  const auto base = quadrants(pairs);
  std::mt19937 rng(3);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  CHECK(quadrants(pairs) == base);

  std::vector<std::pair<BinaryLabel, BinaryLabel>> labels;
  for (const auto& s : corpus.sessions) {
    labels.emplace_back(binarize(Condition::Phq, s.phq8), binarize(Condition::Gad, s.gad7));
  }
  const auto by_label = quadrants(labels);
  CHECK(by_label == base);
  double sum = 0;
  for (int q = 0; q < 4; ++q) {
    CHECK(by_label.fraction(static_cast<Quadrant>(q)) == base.fraction(static_cast<Quadrant>(q)));
    sum += base.fraction(static_cast<Quadrant>(q));
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("printed co-occurrence matrix ingests with reported clamping") {
  const auto text = read_file(std::string(DEPANX_SOURCE_DIR) + "/data/fig3_joint_counts.csv");
  const auto ingest = ingest_matrix_csv(text);
  CHECK(ingest.matrix.total() == 15951);
  // Columns 22..24 exceed the GAD-7 range and the trailing unlabeled cell
  // on 21 rows is dropped.
  CHECK(ingest.notes.size() == 3 + 21);
  const auto transposed = ingest_matrix_csv(text, MatrixOrientation::RowsAreGad);
  CHECK(transposed.matrix.total() == 15951);
  CHECK(transposed.notes.size() == 21);
}

TEST_CASE("printed matrix correlation and marginals") {
  const auto m = printed_matrix();
  const double r = pearson_from_matrix(m);
  CHECK(std::abs(r - 0.80) <= 0.05);
  CHECK(std::abs(r - pairs_pearson(m.expand())) <= 1e-12);

  const auto phq = marginal_histogram(m, Axis::Phq);
  const auto gad = marginal_histogram(m, Axis::Gad);
  CHECK(phq.size() == 25);
  CHECK(gad.size() == 22);
  // A 5% gap at label zero, within transcription noise.
  CHECK(std::abs(std::abs(phq[0] - gad[0]) - 0.05) <= 0.02);
}

TEST_CASE("marginal histogram properties") {
  JointCountMatrix single;
  single.add(7, 3, 4);
  auto h = marginal_histogram(single, Axis::Phq);
  CHECK(h[7] == 1.0);
  CHECK(marginal_histogram(single, Axis::Gad)[3] == 1.0);

  JointCountMatrix uniform;
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) uniform.add(r, c, 2);
  }
  for (double v : marginal_histogram(uniform, Axis::Phq)) CHECK(v == doctest::Approx(1.0 / 25));
  for (double v : marginal_histogram(uniform, Axis::Gad)) CHECK(v == doctest::Approx(1.0 / 22));

  const auto m = printed_matrix();
  const auto phq = marginal_histogram(m, Axis::Phq);
  double total = 0;
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    std::int64_t row = 0;
    for (int c = 0; c < JointCountMatrix::kCols; ++c) row += m.at(r, c);
    CHECK(phq[static_cast<std::size_t>(r)] * static_cast<double>(m.total()) ==
          doctest::Approx(static_cast<double>(row)).epsilon(1e-12));
    total += phq[static_cast<std::size_t>(r)];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(marginal_histogram(JointCountMatrix{}, Axis::Phq), ValidationError);
}

TEST_CASE("pearson_from_matrix special cases") {
  JointCountMatrix diag;
  for (int k = 0; k < 5; ++k) diag.add(k, k, k + 1);
  CHECK(pearson_from_matrix(diag) == doctest::Approx(1.0).epsilon(1e-14));

  std::vector<std::int64_t> a = {3, 1, 4, 1, 5}, b = {2, 7, 1, 8};
  JointCountMatrix indep;
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 4; ++c) indep.add(r, c, a[static_cast<std::size_t>(r)] * b[static_cast<std::size_t>(c)]);
  }
  CHECK(std::abs(pearson_from_matrix(indep)) <= 1e-12);

  JointCountMatrix flat;
  flat.add(3, 0, 5);
  flat.add(3, 4, 5);
  CHECK_THROWS_AS(pearson_from_matrix(flat), ValidationError);
}

TEST_CASE("pearson_from_matrix equals the expanded-pairs oracle on random matrices") {
  std::mt19937 rng(17);
  std::uniform_int_distribution<int> cell(0, 6);
  for (int trial = 0; trial < 20; ++trial) {
    JointCountMatrix m;
    for (int r = 0; r < JointCountMatrix::kRows; ++r) {
      for (int c = 0; c < JointCountMatrix::kCols; ++c) m.add(r, c, cell(rng) * (std::abs(r - c) < 6 ? 3 : 1));
    }
    CHECK(std::abs(pearson_from_matrix(m) - pairs_pearson(m.expand())) <= 1e-12);
  }
}

TEST_CASE("rebalance downsamples the majority class") {
  std::vector<char> raw(1000, 0);
  for (int i = 0; i < 1000; i += 10) raw[static_cast<std::size_t>(i)] = 1;
  std::unique_ptr<bool[]> labels(new bool[raw.size()]);
  for (std::size_t i = 0; i < raw.size(); ++i) labels[i] = raw[i] != 0;
  const std::span<const bool> view(labels.get(), raw.size());

  const auto kept = rebalance(view, 0.5, 42);
  std::size_t pos = 0;
  for (auto i : kept) pos += view[i];
  CHECK(pos == 100);
  CHECK(kept.size() == 200);
  CHECK(std::is_sorted(kept.begin(), kept.end()));
  CHECK(rebalance(view, 0.5, 42) == kept);
  CHECK(rebalance(view, 0.5, 43) != kept);

  CHECK_THROWS_AS(rebalance(view, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(rebalance(view, 0.9999, 1), ValidationError);
}

TEST_CASE("rebalance to the published joint prior") {
  // Joint (+,+) vs (-,-) test sessions: 455 positives, 2262 negatives.
  const std::size_t n = 455 + 2262;
  std::unique_ptr<bool[]> labels(new bool[n]);
  for (std::size_t i = 0; i < n; ++i) labels[i] = (i * 7919) % n < 455;
  std::size_t p0 = 0;
  for (std::size_t i = 0; i < n; ++i) p0 += labels[i];
  REQUIRE(p0 == 455);
  const std::span<const bool> view(labels.get(), n);
  CHECK(static_cast<double>(p0) / static_cast<double>(n) == doctest::Approx(0.167).epsilon(0.01));
  const auto kept = rebalance(view, 0.211, 9);
  std::size_t pos = 0;
  for (auto i : kept) pos += view[i];
  CHECK(pos == 455);  // minority class untouched
  const double achieved = static_cast<double>(pos) / static_cast<double>(kept.size());
  CHECK(std::abs(achieved - 0.211) <= 1.0 / static_cast<double>(kept.size()));
}

TEST_CASE("rebalance over sessions keeps every minority session") {
  const auto corpus = generate_synthetic(depanx::testing::small_synth(400), 21);
  const auto subset = rebalance(corpus.sessions, Condition::Phq, 0.5, 5);
  std::size_t minority_before = 0, minority_after = 0, pos_after = 0;
  std::size_t pos_before = 0;
  for (const auto& s : corpus.sessions) pos_before += is_positive(s.phq8);
  const bool pos_minority = 2 * pos_before < corpus.sessions.size();
  for (const auto& s : corpus.sessions) minority_before += is_positive(s.phq8) == pos_minority;
  for (const auto& s : subset) {
    minority_after += is_positive(s.phq8) == pos_minority;
    pos_after += is_positive(s.phq8);
  }
  CHECK(minority_after == minority_before);
  CHECK(std::abs(static_cast<double>(pos_after) / static_cast<double>(subset.size()) - 0.5) <=
        1.0 / static_cast<double>(subset.size()));
}

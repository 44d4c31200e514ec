#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "depanx/corpus.hpp"

namespace depanx {

struct ScorePair {
  int phq = 0;
  int gad = 0;
};

/// Joint binary status, depression first: (+,+) (+,-) (-,+) (-,-).
enum class Quadrant { PosPos = 0, PosNeg = 1, NegPos = 2, NegNeg = 3 };

std::string_view to_string(Quadrant q);
Quadrant quadrant_of(bool dep_positive, bool anx_positive);
Quadrant quadrant_of(const Session& s, int threshold = kDefaultThreshold);

struct QuadrantTable {
  std::array<std::int64_t, 4> counts{};
  std::int64_t total = 0;

  std::int64_t count(Quadrant q) const { return counts[static_cast<std::size_t>(q)]; }
  double fraction(Quadrant q) const {
    return static_cast<double>(count(q)) / static_cast<double>(total);
  }
  bool operator==(const QuadrantTable&) const = default;
};

QuadrantTable quadrants(std::span<const ScorePair> scores, int threshold = kDefaultThreshold);
QuadrantTable quadrants(std::span<const std::pair<BinaryLabel, BinaryLabel>> labels);
std::vector<ScorePair> score_pairs(const Corpus& corpus);

/// Percentage truncated (not rounded) to `decimals` places, the way the
/// label-distribution tables are printed: 0.18583 -> 18.5.
double truncated_percent(double fraction, int decimals = 1);

enum class Axis { Phq, Gad };

/// Session counts indexed by (PHQ score 0..24, GAD score 0..21).
class JointCountMatrix {
 public:
  static constexpr int kRows = kPhqMax + 1;
  static constexpr int kCols = kGadMax + 1;

  JointCountMatrix() = default;

  std::int64_t at(int phq, int gad) const;
  void add(int phq, int gad, std::int64_t n = 1);
  std::int64_t total() const noexcept { return total_; }

  static JointCountMatrix from_corpus(const Corpus& corpus);
  /// Expands to one (phq, gad) pair per counted session.
  std::vector<ScorePair> expand() const;

  bool operator==(const JointCountMatrix&) const = default;

 private:
  std::array<std::int64_t, kRows * kCols> counts_{};
  std::int64_t total_ = 0;
};

enum class MatrixOrientation { RowsArePhq, RowsAreGad };

struct MatrixIngest {
  JointCountMatrix matrix;
  /// One human-readable line per dropped or clamped group of cells.
  std::vector<std::string> notes;
};

/// Reads a header row of column scores followed by rows of
/// "row_score,count,count,...". Rows may be ragged. Cells past the last
/// header column are dropped; scores beyond an instrument maximum are
/// clamped into the top bin. Both are reported in `notes`.
MatrixIngest ingest_matrix_csv(std::string_view text,
                               MatrixOrientation orientation = MatrixOrientation::RowsArePhq);

/// Normalized marginal histogram along an axis; bins sum to 1.
std::vector<double> marginal_histogram(const JointCountMatrix& matrix, Axis axis);

/// Pearson correlation of the discrete joint distribution given by counts.
double pearson_from_matrix(const JointCountMatrix& matrix);

/// Seeded downsampling of the over-represented class so the positive
/// fraction matches target_prior (to the nearest whole session). Returns
/// kept indices in their original order.
std::vector<std::size_t> rebalance(std::span<const bool> positive, double target_prior,
                                   std::uint64_t seed);

std::vector<Session> rebalance(std::span<const Session> sessions, Condition condition,
                               double target_prior, std::uint64_t seed,
                               int threshold = kDefaultThreshold);

}  // namespace depanx

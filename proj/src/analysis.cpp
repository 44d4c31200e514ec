#include "depanx/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "depanx/error.hpp"
#include "depanx/random.hpp"

namespace depanx {

std::string_view to_string(Quadrant q) {
  switch (q) {
    case Quadrant::PosPos: return "+,+";
    case Quadrant::PosNeg: return "+,-";
    case Quadrant::NegPos: return "-,+";
    case Quadrant::NegNeg: return "-,-";
  }
  return "?";
}

Quadrant quadrant_of(bool dep, bool anx) {
  if (dep) return anx ? Quadrant::PosPos : Quadrant::PosNeg;
  return anx ? Quadrant::NegPos : Quadrant::NegNeg;
}

Quadrant quadrant_of(const Session& s, int threshold) {
  return quadrant_of(is_positive(s.phq8, threshold), is_positive(s.gad7, threshold));
}

QuadrantTable quadrants(std::span<const ScorePair> scores, int threshold) {
  if (scores.empty()) throw ValidationError("E_EMPTY", "quadrants of an empty score list");
  QuadrantTable t;
  for (const auto& p : scores) {
    if (p.phq < 0 || p.phq > kPhqMax || p.gad < 0 || p.gad > kGadMax) {
      throw ValidationError("E_SCORE_RANGE", "score pair (" + std::to_string(p.phq) + "," +
                                                 std::to_string(p.gad) + ") out of range");
    }
    ++t.counts[static_cast<std::size_t>(
        quadrant_of(is_positive(p.phq, threshold), is_positive(p.gad, threshold)))];
  }
  t.total = static_cast<std::int64_t>(scores.size());
  return t;
}

QuadrantTable quadrants(std::span<const std::pair<BinaryLabel, BinaryLabel>> labels) {
  if (labels.empty()) throw ValidationError("E_EMPTY", "quadrants of an empty label list");
  QuadrantTable t;
  for (const auto& [dep, anx] : labels) {
    if (dep.condition != Condition::Phq || anx.condition != Condition::Gad) {
      throw ValidationError("E_LABEL", "label pairs must be (PHQ, GAD)");
    }
    ++t.counts[static_cast<std::size_t>(quadrant_of(dep.positive, anx.positive))];
  }
  t.total = static_cast<std::int64_t>(labels.size());
  return t;
}

std::vector<ScorePair> score_pairs(const Corpus& corpus) {
  std::vector<ScorePair> out;
  out.reserve(corpus.sessions.size());
  for (const auto& s : corpus.sessions) out.push_back({s.phq8, s.gad7});
  return out;
}

double truncated_percent(double fraction, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The epsilon keeps exact decimals such as 0.181 from truncating to 18.0.
  return std::floor(fraction * 100.0 * scale + 1e-9) / scale;
}

std::int64_t JointCountMatrix::at(int phq, int gad) const {
  if (phq < 0 || phq >= kRows || gad < 0 || gad >= kCols) {
    throw ValidationError("E_SCORE_RANGE", "matrix index out of range");
  }
  return counts_[static_cast<std::size_t>(phq * kCols + gad)];
}

void JointCountMatrix::add(int phq, int gad, std::int64_t n) {
  if (phq < 0 || phq >= kRows || gad < 0 || gad >= kCols) {
    throw ValidationError("E_SCORE_RANGE", "matrix index out of range");
  }
  if (n < 0) throw ValidationError("E_COUNT", "negative count");
  counts_[static_cast<std::size_t>(phq * kCols + gad)] += n;
  total_ += n;
}

JointCountMatrix JointCountMatrix::from_corpus(const Corpus& corpus) {
  JointCountMatrix m;
  for (const auto& s : corpus.sessions) m.add(s.phq8, s.gad7);
  return m;
}

std::vector<ScorePair> JointCountMatrix::expand() const {
  std::vector<ScorePair> out;
  out.reserve(static_cast<std::size_t>(total_));
  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kCols; ++c) {
      for (std::int64_t k = 0; k < at(r, c); ++k) out.push_back({r, c});
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',' || ch == '\t') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  cells.push_back(cur);
  // Trailing empty cells carry no data.
  while (!cells.empty() && cells.back().find_first_not_of(' ') == std::string::npos) cells.pop_back();
  return cells;
}

long parse_int(const std::string& cell, std::size_t line, const char* what) {
  const auto first = cell.find_first_not_of(' ');
  if (first == std::string::npos) return 0;
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(cell.substr(first), &used);
  } catch (const std::exception&) {
    throw ValidationError("E_MATRIX_PARSE", "line " + std::to_string(line) + ": bad " + what +
                                                " '" + cell + "'");
  }
  if (cell.substr(first + used).find_first_not_of(' ') != std::string::npos) {
    throw ValidationError("E_MATRIX_PARSE", "line " + std::to_string(line) + ": bad " + what +
                                                " '" + cell + "'");
  }
  return v;
}

}  // namespace

MatrixIngest ingest_matrix_csv(std::string_view text, MatrixOrientation orientation) {
  MatrixIngest result;
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  std::size_t header_line = 0;
  while (header_line < lines.size() &&
         lines[header_line].find_first_not_of(" \r\t,") == std::string_view::npos) {
    ++header_line;
  }
  if (header_line == lines.size()) throw ValidationError("E_MATRIX_PARSE", "matrix CSV is empty");

  const bool rows_phq = orientation == MatrixOrientation::RowsArePhq;
  const int row_max = rows_phq ? kPhqMax : kGadMax;
  const int col_max = rows_phq ? kGadMax : kPhqMax;

  const auto header = split_csv_line(lines[header_line]);
  std::vector<int> col_scores;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const long v = parse_int(header[i], header_line + 1, "column score");
    if (v < 0) throw ValidationError("E_MATRIX_PARSE", "negative column score in header");
    col_scores.push_back(static_cast<int>(v));
  }
  if (col_scores.empty()) throw ValidationError("E_MATRIX_PARSE", "matrix header has no columns");
  for (int s : col_scores) {
    if (s > col_max) {
      std::ostringstream note;
      note << "column score " << s << " exceeds instrument maximum " << col_max
           << "; counts clamped into " << col_max;
      result.notes.push_back(note.str());
    }
  }

  for (std::size_t li = header_line + 1; li < lines.size(); ++li) {
    const auto cells = split_csv_line(lines[li]);
    if (cells.empty()) continue;
    const long row_score = parse_int(cells[0], li + 1, "row score");
    if (row_score < 0) throw ValidationError("E_MATRIX_PARSE", "negative row score on line " + std::to_string(li + 1));
    int row = static_cast<int>(row_score);
    if (row > row_max) {
      result.notes.push_back("row score " + std::to_string(row) + " exceeds instrument maximum " +
                             std::to_string(row_max) + "; counts clamped into " + std::to_string(row_max));
      row = row_max;
    }
    std::int64_t dropped = 0;
    std::size_t dropped_cells = 0;
    for (std::size_t ci = 1; ci < cells.size(); ++ci) {
      const long n = parse_int(cells[ci], li + 1, "count");
      if (n < 0) {
        throw ValidationError("E_COUNT", "line " + std::to_string(li + 1) + ": negative count");
      }
      if (ci - 1 >= col_scores.size()) {
        dropped += n;
        ++dropped_cells;
        continue;
      }
      const int col = std::min(col_scores[ci - 1], col_max);
      if (rows_phq) {
        result.matrix.add(row, col, n);
      } else {
        result.matrix.add(col, row, n);
      }
    }
    if (dropped_cells > 0) {
      result.notes.push_back("row " + std::to_string(row_score) + ": " + std::to_string(dropped_cells) +
                             " cell(s) beyond the header dropped (count " + std::to_string(dropped) + ")");
    }
  }
  return result;
}

std::vector<double> marginal_histogram(const JointCountMatrix& m, Axis axis) {
  if (m.total() <= 0) throw ValidationError("E_EMPTY", "histogram of an empty matrix");
  const int bins = axis == Axis::Phq ? JointCountMatrix::kRows : JointCountMatrix::kCols;
  std::vector<std::int64_t> sums(static_cast<std::size_t>(bins), 0);
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) {
      sums[static_cast<std::size_t>(axis == Axis::Phq ? r : c)] += m.at(r, c);
    }
  }
  std::vector<double> hist(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) {
    hist[i] = static_cast<double>(sums[i]) / static_cast<double>(m.total());
  }
  return hist;
}

double pearson_from_matrix(const JointCountMatrix& m) {
  if (m.total() < 2) throw ValidationError("E_EMPTY", "correlation needs at least two sessions");
  const double n = static_cast<double>(m.total());
  double mean_r = 0, mean_c = 0;
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) {
      const double w = static_cast<double>(m.at(r, c));
      mean_r += w * r;
      mean_c += w * c;
    }
  }
  mean_r /= n;
  mean_c /= n;
  double srr = 0, scc = 0, src = 0;
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) {
      const double w = static_cast<double>(m.at(r, c));
      srr += w * (r - mean_r) * (r - mean_r);
      scc += w * (c - mean_c) * (c - mean_c);
      src += w * (r - mean_r) * (c - mean_c);
    }
  }
  if (srr <= 0 || scc <= 0) throw ValidationError("E_ZERO_VARIANCE", "correlation undefined: zero variance");
  return src / std::sqrt(srr * scc);
}

std::vector<std::size_t> rebalance(std::span<const bool> positive, double target_prior,
                                   std::uint64_t seed) {
  if (!(target_prior > 0 && target_prior < 1)) {
    throw ValidationError("E_PRIOR", "target prior must lie strictly inside (0,1)");
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < positive.size(); ++i) (positive[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) {
    throw ValidationError("E_SINGLE_CLASS", "rebalancing needs both classes present");
  }
  const double p = static_cast<double>(pos.size());
  const double q = static_cast<double>(neg.size());
  const double current = p / (p + q);

  std::vector<std::size_t>* shrink = nullptr;
  std::size_t keep = 0;
  if (current < target_prior) {
    shrink = &neg;
    keep = static_cast<std::size_t>(std::llround(p * (1 - target_prior) / target_prior));
  } else if (current > target_prior) {
    shrink = &pos;
    keep = static_cast<std::size_t>(std::llround(q * target_prior / (1 - target_prior)));
  }
  if (shrink) {
    if (keep < 1 || keep > shrink->size()) {
      throw ValidationError("E_PRIOR_UNREACHABLE",
                            "target prior unreachable by downsampling alone");
    }
    Rng rng = make_rng(seed, "analysis.rebalance");
    std::shuffle(shrink->begin(), shrink->end(), rng);
    shrink->resize(keep);
  }
  std::vector<std::size_t> kept;
  kept.reserve(pos.size() + neg.size());
  kept.insert(kept.end(), pos.begin(), pos.end());
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<Session> rebalance(std::span<const Session> sessions, Condition condition,
                               double target_prior, std::uint64_t seed, int threshold) {
  // std::vector<bool> is not contiguous, so stage the labels in a bool array.
  auto flags = std::make_unique<bool[]>(sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    flags[i] = is_positive(sessions[i].score(condition), threshold);
  }
  const auto kept = rebalance(std::span<const bool>(flags.get(), sessions.size()), target_prior, seed);
  std::vector<Session> out;
  out.reserve(kept.size());
  for (auto i : kept) out.push_back(sessions[i]);
  return out;
}

}  // namespace depanx

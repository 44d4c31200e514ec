#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depanx/analysis.hpp"
#include "depanx/finetune.hpp"

namespace depanx {

/// Cumulative word-gated predictions: scores[k] is the model output on the
/// first k+1 tokens of the session.
struct PredictionTrace {
  std::string session_id;
  Condition condition = Condition::Phq;
  std::vector<double> scores;
};

/// Carries recurrent state forward one token at a time, so an n-token
/// session costs one pass and yields n predictions. Separators count as
/// gate positions and the state is never reset inside a session.
PredictionTrace gated_predictions(const PredictionModel& model, const Session& session);
PredictionTrace gated_predictions(const PredictionModel& model, std::span<const TokenId> ids);

/// Population standard deviation (Welford).
double ws_variability(std::span<const double> trace);

struct VariabilityTable {
  Condition condition = Condition::Phq;
  /// Indexed by Quadrant; absent when no session falls in the cell.
  std::array<std::optional<double>, 4> mean{};
  std::array<std::size_t, 4> count{};

  std::size_t total() const { return count[0] + count[1] + count[2] + count[3]; }
};

/// Mean within-session variability per (depression, anxiety) quadrant.
/// When `traces` is given it receives every trace in session order.
VariabilityTable variability_by_quadrant(const PredictionModel& model,
                                         std::span<const Session* const> sessions,
                                         unsigned threads = 1,
                                         std::vector<PredictionTrace>* traces = nullptr);

/// Aggregation step on precomputed per-session variability values.
VariabilityTable tabulate_variability(Condition condition, std::span<const Session* const> sessions,
                                      std::span<const double> variability);

/// Session-weighted mean over all cells.
double overall_mean(const VariabilityTable& table);

}  // namespace depanx

#include "depanx/variability.hpp"

#include <cmath>

#include "depanx/error.hpp"
#include "depanx/parallel.hpp"

namespace depanx {

PredictionTrace gated_predictions(const PredictionModel& model, std::span<const TokenId> ids) {
  PredictionTrace trace;
  trace.condition = model.condition;
  StreamingPredictor stream(model);
  for (TokenId id : ids) {
    if (id == Vocabulary::kPad) continue;
    trace.scores.push_back(stream.push(id));
  }
  if (trace.scores.empty()) throw ValidationError("E_EMPTY", "cannot gate an empty session");
  return trace;
}

PredictionTrace gated_predictions(const PredictionModel& model, const Session& session) {
  auto trace = gated_predictions(model, session_ids(session, model.vocab));
  trace.session_id = session.session_id;
  return trace;
}

double ws_variability(std::span<const double> trace) {
  if (trace.empty()) throw ValidationError("E_EMPTY", "variability needs at least one prediction");
  double mean = 0, m2 = 0;
  std::size_t n = 0;
  for (double x : trace) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  return std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
}

VariabilityTable tabulate_variability(Condition condition, std::span<const Session* const> sessions,
                                      std::span<const double> variability) {
  if (sessions.size() != variability.size()) {
    throw ValidationError("E_SHAPE", "one variability value per session");
  }
  VariabilityTable t;
  t.condition = condition;
  std::array<double, 4> sum{};
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const auto q = static_cast<std::size_t>(quadrant_of(*sessions[k]));
    sum[q] += variability[k];
    ++t.count[q];
  }
  for (std::size_t q = 0; q < 4; ++q) {
    if (t.count[q] > 0) t.mean[q] = sum[q] / static_cast<double>(t.count[q]);
  }
  return t;
}

VariabilityTable variability_by_quadrant(const PredictionModel& model,
                                         std::span<const Session* const> sessions, unsigned threads,
                                         std::vector<PredictionTrace>* traces) {
  std::vector<PredictionTrace> all(sessions.size());
  std::vector<double> values(sessions.size());
  parallel_for(sessions.size(), threads, [&](std::size_t k) {
    all[k] = gated_predictions(model, *sessions[k]);
    values[k] = ws_variability(all[k].scores);
  });
  if (traces) *traces = std::move(all);
  return tabulate_variability(model.condition, sessions, values);
}

double overall_mean(const VariabilityTable& table) {
  double sum = 0;
  for (std::size_t q = 0; q < 4; ++q) {
    if (table.mean[q]) sum += *table.mean[q] * static_cast<double>(table.count[q]);
  }
  if (table.total() == 0) throw ValidationError("E_EMPTY", "variability table is empty");
  return sum / static_cast<double>(table.total());
}

}  // namespace depanx

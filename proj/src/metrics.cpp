#include "depanx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "depanx/analysis.hpp"
#include "depanx/error.hpp"

namespace depanx {
namespace {

void check_inputs(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("E_SHAPE", "scores and labels differ in length");
  }
  const auto pos = std::count(labels.begin(), labels.end(), true);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
    throw ValidationError("E_SINGLE_CLASS", "metric needs both classes present");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("E_NONFINITE", "scores must be finite");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace

double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) {
  check_inputs(scores, labels);
  const auto idx = order_by_score(scores);
  // Sum of average ranks of the positives.
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(idx.size() - pos);
  return (rank_sum - p * (p + 1) / 2.0) / (p * n);
}

EerPoint eer_point(std::span<const double> scores, const std::vector<bool>& labels) {
  check_inputs(scores, labels);
  const auto idx = order_by_score(scores);
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), true));
  const double N = static_cast<double>(labels.size()) - P;

  // Thresholds descending over distinct scores; the sweep starts above the
  // maximum where nothing is called positive.
  struct Row {
    double threshold, fpr, fnr;
  };
  std::vector<Row> rows;
  rows.push_back({scores[idx.back()], 0.0, 1.0});
  double tp = 0, fp = 0;
  for (std::size_t i = idx.size(); i > 0;) {
    std::size_t j = i;
    const double s = scores[idx[i - 1]];
    while (j > 0 && scores[idx[j - 1]] == s) {
      if (labels[idx[j - 1]]) {
        tp += 1;
      } else {
        fp += 1;
      }
      --j;
    }
    rows.push_back({s, fp / N, 1.0 - tp / P});
    i = j;
  }
  for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
    const double d0 = rows[k].fpr - rows[k].fnr;
    const double d1 = rows[k + 1].fpr - rows[k + 1].fnr;
    if (d0 == 0) return {rows[k].threshold, 1.0 - rows[k].fnr, 1.0 - rows[k].fpr};
    if (d0 < 0 && d1 >= 0) {
      const double a = d0 / (d0 - d1);
      const double fpr = rows[k].fpr + a * (rows[k + 1].fpr - rows[k].fpr);
      const double fnr = rows[k].fnr + a * (rows[k + 1].fnr - rows[k].fnr);
      const double thr = rows[k].threshold + a * (rows[k + 1].threshold - rows[k].threshold);
      return {thr, 1.0 - fnr, 1.0 - fpr};
    }
  }
  // The last row calls everything positive (FNR 0), so a crossing exists.
  const auto& last = rows.back();
  return {last.threshold, 1.0 - last.fnr, 1.0 - last.fpr};
}

std::vector<ScoreBucket> accuracy_by_raw_score(const std::vector<bool>& predicted,
                                               std::span<const int> raw_scores, Condition condition,
                                               int threshold) {
  if (predicted.size() != raw_scores.size()) {
    throw ValidationError("E_SHAPE", "predictions and scores differ in length");
  }
  const int max = max_score(condition);
  std::vector<ScoreBucket> all(static_cast<std::size_t>(max + 1));
  for (int s = 0; s <= max; ++s) all[static_cast<std::size_t>(s)].score = s;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    const int s = raw_scores[k];
    if (s < 0 || s > max) {
      throw ValidationError("E_SCORE_RANGE", "score " + std::to_string(s) + " outside the " +
                                                 std::string(to_string(condition)) + " range");
    }
    auto& b = all[static_cast<std::size_t>(s)];
    ++b.count;
    b.correct += predicted[k] == binarize(condition, s, threshold).positive;
  }
  std::vector<ScoreBucket> out;
  for (const auto& b : all) {
    if (b.count > 0) out.push_back(b);
  }
  return out;
}

double rmse(std::span<const double> estimates, std::span<const int> raw_scores) {
  if (estimates.empty()) throw ValidationError("E_EMPTY", "rmse needs at least one estimate");
  if (estimates.size() != raw_scores.size()) throw ValidationError("E_SHAPE", "length mismatch");
  double se = 0;
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    const double e = estimates[k] - raw_scores[k];
    se += e * e;
  }
  return std::sqrt(se / static_cast<double>(estimates.size()));
}

std::string_view to_string(Subset s) {
  switch (s) {
    case Subset::All:
      return "all";
    case Subset::JointOnly:
      return "joint";
    case Subset::JointRebalanced:
      return "joint-rebalanced";
  }
  return "all";
}

Subset parse_subset(std::string_view s) {
  if (s == "all") return Subset::All;
  if (s == "joint" || s == "joint-only") return Subset::JointOnly;
  if (s == "joint-rebalanced") return Subset::JointRebalanced;
  throw ValidationError("E_SUBSET", "subset must be all, joint or joint-rebalanced");
}

std::vector<std::size_t> subset_indices(std::span<const Session* const> sessions, Condition condition,
                                        const SubsetSpec& spec) {
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const bool dep = is_positive(sessions[k]->phq8);
    const bool anx = is_positive(sessions[k]->gad7);
    if (spec.subset == Subset::All || dep == anx) keep.push_back(k);
  }
  if (spec.subset != Subset::JointRebalanced) return keep;

  double prior = 0;
  if (spec.target_prior) {
    prior = *spec.target_prior;
  } else {
    std::size_t pos = 0;
    for (const auto* s : sessions) pos += is_positive(s->score(condition));
    prior = static_cast<double>(pos) / static_cast<double>(sessions.size());
  }
  std::unique_ptr<bool[]> labels(new bool[keep.size()]);
  for (std::size_t k = 0; k < keep.size(); ++k) labels[k] = is_positive(sessions[keep[k]]->score(condition));
  const auto kept = rebalance(std::span<const bool>(labels.get(), keep.size()), prior, spec.seed);
  std::vector<std::size_t> out;
  out.reserve(kept.size());
  for (auto k : kept) out.push_back(keep[k]);
  return out;
}

EvalReport evaluate_scores(std::span<const double> scores, std::span<const Session* const> sessions,
                           Condition condition, const SubsetSpec& spec, bool regression,
                           BucketThreshold bucket_threshold) {
  if (scores.size() != sessions.size()) throw ValidationError("E_SHAPE", "one score per session");
  if (sessions.empty()) throw ValidationError("E_EMPTY", "no sessions to evaluate");
  const auto keep = subset_indices(sessions, condition, spec);
  std::vector<double> s;
  std::vector<bool> y;
  std::vector<int> raw;
  for (auto k : keep) {
    s.push_back(scores[k]);
    raw.push_back(sessions[k]->score(condition));
    y.push_back(is_positive(raw.back()));
  }
  EvalReport r;
  r.condition = condition;
  r.subset = spec.subset;
  r.n_sessions = keep.size();
  r.n_positive = static_cast<std::size_t>(std::count(y.begin(), y.end(), true));
  if (r.n_positive == 0 || r.n_positive == r.n_sessions) {
    throw ValidationError("E_SINGLE_CLASS", std::string(to_string(condition)) + " subset '" +
                                                std::string(to_string(spec.subset)) + "' has " +
                                                std::to_string(r.n_sessions) + " sessions of one class");
  }
  r.auc = roc_auc(s, y);
  const auto eer = eer_point(s, y);
  r.eer_threshold = eer.threshold;
  r.sensitivity_at_eer = eer.sensitivity;
  r.specificity_at_eer = eer.specificity;
  if (regression) r.rmse = rmse(s, raw);
  const double cut = bucket_threshold == BucketThreshold::Eer
                         ? eer.threshold
                         : (regression ? static_cast<double>(kDefaultThreshold) : 0.5);
  std::vector<bool> called;
  for (double v : s) called.push_back(v >= cut);
  r.accuracy_by_score = accuracy_by_raw_score(called, raw, condition);
  return r;
}

EvalReport joint_subset_eval(const PredictionModel& model, std::span<const Session* const> sessions,
                             const SubsetSpec& spec, unsigned threads, BucketThreshold bucket_threshold) {
  const auto scores = predict_sessions(model, sessions, threads);
  return evaluate_scores(scores, sessions, model.condition, spec, model.mode == HeadMode::Regression,
                         bucket_threshold);
}

}  // namespace depanx

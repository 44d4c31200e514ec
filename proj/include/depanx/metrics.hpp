#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "depanx/corpus.hpp"
#include "depanx/finetune.hpp"

namespace depanx {

/// Mann-Whitney AUC with ties counted one half. O(n log n).
double roc_auc(std::span<const double> scores, const std::vector<bool>& labels);

struct EerPoint {
  double threshold = 0;
  double sensitivity = 0;
  double specificity = 0;
};

/// Scores at or above the threshold are called positive. The threshold is
/// interpolated linearly between the adjacent empirical thresholds where
/// FPR - FNR changes sign.
EerPoint eer_point(std::span<const double> scores, const std::vector<bool>& labels);

struct ScoreBucket {
  int score = 0;
  std::int64_t count = 0;
  std::int64_t correct = 0;
  double accuracy() const { return count ? static_cast<double>(correct) / static_cast<double>(count) : 0.0; }
  bool operator==(const ScoreBucket&) const = default;
};

/// Per raw score, the fraction of sessions whose binary call matches
/// binarize(score). Only non-empty buckets are returned, in score order.
std::vector<ScoreBucket> accuracy_by_raw_score(const std::vector<bool>& predicted,
                                               std::span<const int> raw_scores, Condition condition,
                                               int threshold = kDefaultThreshold);

double rmse(std::span<const double> estimates, std::span<const int> raw_scores);

enum class Subset { All, JointOnly, JointRebalanced };
std::string_view to_string(Subset s);
Subset parse_subset(std::string_view s);  // all | joint | joint-rebalanced

struct SubsetSpec {
  Subset subset = Subset::All;
  /// Positive prior for JointRebalanced; defaults to the positive prior of
  /// the full session set passed in.
  std::optional<double> target_prior;
  std::uint64_t seed = 0;
};

/// Which decision threshold the severity-bucket table uses.
enum class BucketThreshold { Eer, Half };

struct EvalReport {
  Condition condition = Condition::Phq;
  Subset subset = Subset::All;
  std::size_t n_sessions = 0;
  std::size_t n_positive = 0;
  double auc = 0;
  double eer_threshold = 0;
  double sensitivity_at_eer = 0;
  double specificity_at_eer = 0;
  std::optional<double> rmse;
  std::vector<ScoreBucket> accuracy_by_score;
};

/// Sessions kept by a subset rule (indices into `sessions`, ascending).
std::vector<std::size_t> subset_indices(std::span<const Session* const> sessions, Condition condition,
                                        const SubsetSpec& spec);

/// Evaluates precomputed scores (probabilities or score estimates) for the
/// chosen subset. `regression` adds RMSE of the estimates.
EvalReport evaluate_scores(std::span<const double> scores, std::span<const Session* const> sessions,
                           Condition condition, const SubsetSpec& spec, bool regression = false,
                           BucketThreshold bucket_threshold = BucketThreshold::Eer);

/// Runs the model over the sessions and evaluates the chosen subset.
EvalReport joint_subset_eval(const PredictionModel& model, std::span<const Session* const> sessions,
                             const SubsetSpec& spec, unsigned threads = 1,
                             BucketThreshold bucket_threshold = BucketThreshold::Eer);

}  // namespace depanx

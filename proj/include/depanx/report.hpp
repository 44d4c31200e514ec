#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "depanx/analysis.hpp"
#include "depanx/metrics.hpp"
#include "depanx/variability.hpp"

namespace depanx {

/// Fixed-precision number formatting used by every CSV writer.
std::string format_number(double v, int digits = 6);

/// condition,subset,auc,eer_threshold,sens,spec,rmse
std::string eval_csv(std::span<const EvalReport> reports);
/// condition,subset,score,count,correct,accuracy,reported
std::string accuracy_csv(std::span<const EvalReport> reports, std::int64_t min_population = 5);
/// scope,quadrant,count,percent
std::string quadrant_csv(const QuadrantTable& table, std::string_view scope);
/// phq,gad,count for every non-zero cell
std::string matrix_csv(const JointCountMatrix& matrix);
/// axis,score,fraction
std::string marginals_csv(const JointCountMatrix& matrix);
/// condition,quadrant,sessions,mean_variability
std::string variability_csv(std::span<const VariabilityTable> tables);
/// session_id,position,score
std::string trace_csv(std::span<const PredictionTrace> traces);

/// 25 x 22 heatmap, one <rect class="cell"> per (phq, gad) bin.
std::string heatmap_svg(const JointCountMatrix& matrix);
/// Accuracy against raw score, one polyline per report. Buckets below
/// min_population are left out of the line.
std::string accuracy_svg(std::span<const EvalReport> reports, std::int64_t min_population = 5);
/// Score distributions of both instruments as two polylines.
std::string marginals_svg(const JointCountMatrix& matrix);

/// Atomic write; unwritable paths raise RuntimeError.
void write_report(const std::filesystem::path& path, std::string_view content);

}  // namespace depanx

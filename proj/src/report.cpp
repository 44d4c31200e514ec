#include "depanx/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "depanx/error.hpp"
#include "depanx/hashing.hpp"

namespace depanx {
namespace {

constexpr double kWidth = 640, kHeight = 420, kMargin = 50;

std::string svg_open(double w, double h) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return s.str();
}

std::string color_for(std::size_t k) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return kColors[k % 6];
}

// Axes box with ticks for a [0, x_max] x [0, 1] plot.
std::string axes(double x_max, const std::string& x_label, const std::string& y_label, double y_max = 1.0) {
  std::ostringstream s;
  const double x0 = kMargin, y0 = kHeight - kMargin, x1 = kWidth - kMargin / 2, y1 = kMargin / 2;
  s << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n";
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= static_cast<int>(x_max); k += 2) {
    const double x = x0 + (x1 - x0) * k / x_max;
    s << "<text x=\"" << x << "\" y=\"" << y0 + 15 << "\" text-anchor=\"middle\">" << k << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = y_max * k / 4.0;
    const double y = y0 - (y0 - y1) * k / 4.0;
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << format_number(v, 2)
      << "</text>\n";
  }
  s << "<text class=\"x-label\" x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 10
    << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  s << "<text class=\"y-label\" x=\"14\" y=\"" << (y0 + y1) / 2 << "\" transform=\"rotate(-90 14 "
    << (y0 + y1) / 2 << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
  s << "</g>\n";
  return s.str();
}

std::string point(double x, double y, double x_max, double y_max) {
  const double x0 = kMargin, y0 = kHeight - kMargin, x1 = kWidth - kMargin / 2, y1 = kMargin / 2;
  return format_number(x0 + (x1 - x0) * x / x_max, 2) + "," + format_number(y0 - (y0 - y1) * y / y_max, 2);
}

std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\n") == std::string_view::npos) return std::string(v);
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_number(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string out(buf);
  // Normalize negative zero.
  if (out[0] == '-' && std::stod(out) == 0.0) out.erase(0, 1);
  return out;
}

std::string eval_csv(std::span<const EvalReport> reports) {
  std::ostringstream s;
  s << "condition,subset,auc,eer_threshold,sens,spec,rmse\n";
  for (const auto& r : reports) {
    s << to_string(r.condition) << ',' << to_string(r.subset) << ',' << format_number(r.auc) << ','
      << format_number(r.eer_threshold) << ',' << format_number(r.sensitivity_at_eer) << ','
      << format_number(r.specificity_at_eer) << ',' << (r.rmse ? format_number(*r.rmse) : "") << '\n';
  }
  return s.str();
}

std::string accuracy_csv(std::span<const EvalReport> reports, std::int64_t min_population) {
  std::ostringstream s;
  s << "condition,subset,score,count,correct,accuracy,reported\n";
  for (const auto& r : reports) {
    for (const auto& b : r.accuracy_by_score) {
      s << to_string(r.condition) << ',' << to_string(r.subset) << ',' << b.score << ',' << b.count << ','
        << b.correct << ',' << format_number(b.accuracy()) << ',' << (b.count >= min_population ? 1 : 0)
        << '\n';
    }
  }
  return s.str();
}

std::string quadrant_csv(const QuadrantTable& table, std::string_view scope) {
  std::ostringstream s;
  s << "scope,quadrant,count,percent\n";
  for (int q = 0; q < 4; ++q) {
    const auto quad = static_cast<Quadrant>(q);
    s << csv_field(scope) << ',' << csv_field(to_string(quad)) << ',' << table.count(quad) << ','
      << format_number(truncated_percent(table.fraction(quad)), 1) << '\n';
  }
  s << csv_field(scope) << ",total," << table.total << ",100.0\n";
  return s.str();
}

std::string matrix_csv(const JointCountMatrix& m) {
  std::ostringstream s;
  s << "phq,gad,count\n";
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) {
      if (m.at(r, c) != 0) s << r << ',' << c << ',' << m.at(r, c) << '\n';
    }
  }
  return s.str();
}

std::string marginals_csv(const JointCountMatrix& m) {
  std::ostringstream s;
  s << "axis,score,fraction\n";
  const auto phq = marginal_histogram(m, Axis::Phq);
  const auto gad = marginal_histogram(m, Axis::Gad);
  for (std::size_t k = 0; k < phq.size(); ++k) s << "phq," << k << ',' << format_number(phq[k]) << '\n';
  for (std::size_t k = 0; k < gad.size(); ++k) s << "gad," << k << ',' << format_number(gad[k]) << '\n';
  return s.str();
}

std::string variability_csv(std::span<const VariabilityTable> tables) {
  std::ostringstream s;
  s << "condition,quadrant,sessions,mean_variability\n";
  for (const auto& t : tables) {
    for (int q = 0; q < 4; ++q) {
      const auto k = static_cast<std::size_t>(q);
      s << to_string(t.condition) << ',' << csv_field(to_string(static_cast<Quadrant>(q))) << ',' << t.count[k] << ','
        << (t.mean[k] ? format_number(*t.mean[k]) : "") << '\n';
    }
  }
  return s.str();
}

std::string trace_csv(std::span<const PredictionTrace> traces) {
  std::ostringstream s;
  s << "session_id,position,score\n";
  for (const auto& t : traces) {
    for (std::size_t k = 0; k < t.scores.size(); ++k) {
      s << csv_field(t.session_id) << ',' << k + 1 << ',' << format_number(t.scores[k], 8) << '\n';
    }
  }
  return s.str();
}

std::string heatmap_svg(const JointCountMatrix& m) {
  const double cell = 20, left = 50, top = 30;
  const double w = left + cell * JointCountMatrix::kRows + 20;
  const double h = top + cell * JointCountMatrix::kCols + 50;
  std::int64_t peak = 1;
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) peak = std::max(peak, m.at(r, c));
  }
  std::ostringstream s;
  s << svg_open(w, h);
  s << "<g class=\"heatmap\">\n";
  // PHQ-8 along x, GAD-7 along y with 0 at the bottom.
  for (int r = 0; r < JointCountMatrix::kRows; ++r) {
    for (int c = 0; c < JointCountMatrix::kCols; ++c) {
      const double level = std::log1p(static_cast<double>(m.at(r, c))) / std::log1p(static_cast<double>(peak));
      const int shade = static_cast<int>(std::lround(255 * (1 - level)));
      s << "<rect class=\"cell\" data-phq=\"" << r << "\" data-gad=\"" << c << "\" data-count=\"" << m.at(r, c)
        << "\" x=\"" << left + r * cell << "\" y=\"" << top + (JointCountMatrix::kCols - 1 - c) * cell
        << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade << "," << shade
        << ",255)\"/>\n";
    }
  }
  s << "</g>\n<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int r = 0; r < JointCountMatrix::kRows; r += 2) {
    s << "<text x=\"" << left + r * cell + cell / 2 << "\" y=\"" << top + cell * JointCountMatrix::kCols + 14
      << "\" text-anchor=\"middle\">" << r << "</text>\n";
  }
  for (int c = 0; c < JointCountMatrix::kCols; c += 3) {
    s << "<text x=\"" << left - 6 << "\" y=\"" << top + (JointCountMatrix::kCols - 1 - c) * cell + 14
      << "\" text-anchor=\"end\">" << c << "</text>\n";
  }
  s << "<text class=\"x-label\" x=\"" << left + cell * JointCountMatrix::kRows / 2 << "\" y=\"" << h - 10
    << "\" text-anchor=\"middle\">PHQ-8</text>\n";
  s << "<text class=\"y-label\" x=\"14\" y=\"" << top + cell * JointCountMatrix::kCols / 2
    << "\" transform=\"rotate(-90 14 " << top + cell * JointCountMatrix::kCols / 2
    << ")\" text-anchor=\"middle\">GAD-7</text>\n</g>\n</svg>\n";
  return s.str();
}

std::string accuracy_svg(std::span<const EvalReport> reports, std::int64_t min_population) {
  std::ostringstream s;
  s << svg_open(kWidth, kHeight) << axes(kPhqMax, "raw score", "accuracy");
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    s << "<polyline class=\"series\" data-condition=\"" << to_string(r.condition) << "\" fill=\"none\" stroke=\""
      << color_for(k) << "\" stroke-width=\"2\" points=\"";
    bool first = true;
    for (const auto& b : r.accuracy_by_score) {
      if (b.count < min_population) continue;
      s << (first ? "" : " ") << point(b.score, b.accuracy(), kPhqMax, 1.0);
      first = false;
    }
    s << "\"/>\n";
    s << "<text x=\"" << kWidth - 120 << "\" y=\"" << 40 + 16 * k << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
      << color_for(k) << "\">" << to_string(r.condition) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string marginals_svg(const JointCountMatrix& m) {
  const auto phq = marginal_histogram(m, Axis::Phq);
  const auto gad = marginal_histogram(m, Axis::Gad);
  double y_max = 0;
  for (double v : phq) y_max = std::max(y_max, v);
  for (double v : gad) y_max = std::max(y_max, v);
  y_max = std::ceil(y_max * 20) / 20;
  std::ostringstream s;
  s << svg_open(kWidth, kHeight) << axes(kPhqMax, "score", "fraction of sessions", y_max);
  const std::vector<double>* series[2] = {&phq, &gad};
  const char* names[2] = {"phq", "gad"};
  for (std::size_t k = 0; k < 2; ++k) {
    s << "<polyline class=\"series\" data-condition=\"" << names[k] << "\" fill=\"none\" stroke=\""
      << color_for(k) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t b = 0; b < series[k]->size(); ++b) {
      s << (b ? " " : "") << point(static_cast<double>(b), (*series[k])[b], kPhqMax, y_max);
    }
    s << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_report(const std::filesystem::path& path, std::string_view content) {
  write_file_atomic(path, content);
}

}  // namespace depanx

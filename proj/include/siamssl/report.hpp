#pragma once

// CSV serialisation of run reports and the cross-seed summary table.

#include "siamssl/errors.hpp"
#include "siamssl/selftrain.hpp"
#include "siamssl/types.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace siamssl {

inline constexpr const char* kReportHeader =
    "iteration,labeled_size,pool_size,selected,pseudo_accuracy,cumulative_pseudo_accuracy,"
    "mean_triplet_loss,test_error,llgc_iterations,llgc_converged";

inline std::string report_row(const IterationRecord& r) {
  std::string s = std::to_string(r.iteration) + ',' + std::to_string(r.labeled_size) + ',' +
                  std::to_string(r.pool_size) + ',' + std::to_string(r.selected) + ',';
  s += (std::isnan(r.pseudo_accuracy) ? std::string() : format_number(r.pseudo_accuracy)) + ',';
  s += (std::isnan(r.cumulative_pseudo_accuracy) ? std::string() : format_number(r.cumulative_pseudo_accuracy)) + ',';
  s += format_number(r.mean_triplet_loss) + ',' + format_number(r.test_error) + ',' +
       std::to_string(r.llgc_iterations) + ',' + (r.llgc_converged ? "1" : "0");
  return s;
}

/// Appends one row per meta-iteration and flushes it immediately.
class ReportWriter {
 public:
  explicit ReportWriter(const std::string& path) : path_(path), out_(path) {
    if (!out_) throw FormatError(path + ": cannot open for writing");
    out_ << kReportHeader << '\n' << std::flush;
  }

  void append(const IterationRecord& r) {
    out_ << report_row(r) << '\n' << std::flush;
    if (!out_) throw FormatError(path_ + ": write failed");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline void write_report_csv(const RunReport& report, const std::string& path) {
  ReportWriter w(path);
  for (const auto& r : report.iterations) w.append(r);
}

/// Wall-clock seconds per iteration. Kept apart from the report so that reports of
/// identical runs compare byte for byte.
inline void write_timing_csv(const RunReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "iteration,wall_seconds\n";
  for (const auto& r : report.iterations) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", r.wall_seconds);
    out << r.iteration << ',' << buf << '\n';
  }
}

struct SummaryRow {
  std::string method;
  std::vector<double> finals;  // final test error per seed, percent
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; NaN for a single seed
};

inline SummaryRow summarize(const std::string& method, std::vector<double> finals) {
  SummaryRow row;
  row.method = method;
  row.finals = std::move(finals);
  const auto n = static_cast<double>(row.finals.size());
  if (row.finals.empty()) {
    row.mean = row.stddev = std::numeric_limits<double>::quiet_NaN();
    return row;
  }
  row.mean = std::accumulate(row.finals.begin(), row.finals.end(), 0.0) / n;
  if (row.finals.size() < 2) {
    row.stddev = std::numeric_limits<double>::quiet_NaN();
    return row;
  }
  double ss = 0.0;
  for (double v : row.finals) ss += (v - row.mean) * (v - row.mean);
  row.stddev = std::sqrt(ss / (n - 1.0));
  return row;
}

/// "mean ± std" with two decimals, the presentation used in result tables.
inline std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  if (std::isnan(stddev))
    std::snprintf(buf, sizeof buf, "%.2f", mean);
  else
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, stddev);
  return buf;
}

inline void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "method,seeds,mean_test_error,std_test_error,display,per_seed\n";
  for (const auto& r : rows) {
    std::string per_seed;
    for (double v : r.finals) per_seed += (per_seed.empty() ? "" : ";") + format_number(v);
    out << r.method << ',' << r.finals.size() << ',' << format_number(r.mean) << ','
        << (std::isnan(r.stddev) ? std::string() : format_number(r.stddev)) << ','
        << format_mean_std(r.mean, r.stddev) << ',' << per_seed << '\n';
  }
}

}  // namespace siamssl

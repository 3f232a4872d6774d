#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "signglyph/training.hpp"

namespace signglyph {

// Parses the metrics CSV written by CsvMetricsSink. Errors name the 1-based
// line number.
std::vector<EpochMetrics> parse_metrics_csv(const std::string& text, const std::string& origin);
std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path);

struct ComparisonRow {
  std::string method;
  double accuracy_percent = 0.0;  // [0, 100]
  std::string caveat;
};

// Published letter-recognition accuracies this pipeline is compared against.
std::vector<ComparisonRow> reference_rows();

// Row for a finished run, from its final validation accuracy.
ComparisonRow run_row(const std::string& method, const std::vector<EpochMetrics>& history);

// `method,accuracy,caveat`, accuracy with one decimal.
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

// `epoch,train_loss,val_loss` and `epoch,train_acc,val_acc` curve tables.
std::string loss_curve_csv(const std::vector<EpochMetrics>& history);
std::string accuracy_curve_csv(const std::vector<EpochMetrics>& history);

// Minimal two-series line chart of a curve; `accuracy` selects which pair.
std::string curve_svg(const std::vector<EpochMetrics>& history, bool accuracy,
                      const std::string& title);

}  // namespace signglyph

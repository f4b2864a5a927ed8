#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "calattn/config.hpp"
#include "calattn/data.hpp"
#include "calattn/metrics.hpp"
#include "calattn/model.hpp"
#include "calattn/posthoc.hpp"
#include "calattn/train.hpp"

namespace calattn {

struct StageMetrics {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double ada_ece = 0.0;
  double classwise_ece = 0.0;
  double smece = 0.0;
  double auroc = 0.0;  // NaN when every prediction is right (or wrong)
  double hcfp_count = 0.0;
  double hcfp_per_1000 = 0.0;
};

struct MetricReport {
  std::size_t samples = 0;
  StageMetrics pre;
  StageMetrics post;
  TemperatureFit fit;  // fitted on the validation split
};

// Softmax of each row of `logits` [N, C] at temperature T.
PredictionBatch predictions(std::span<const double> logits, std::size_t classes, std::span<const int> labels,
                            double T = 1.0);

StageMetrics stage_metrics(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T,
                           const EvalConfig& eval);

/// Metrics on `test` before and after a temperature fitted on `val`. Both
/// stages use the model's calibrated logits.
MetricReport evaluate(const Model& model, const Dataset& val, const Dataset& test, const EvalConfig& eval);

// metric,stage,value rows, values printed with %.17g.
std::string report_csv(const MetricReport& report);

struct DiagnosticRow {
  std::size_t index = 0;
  int label = 0;
  int predicted = 0;
  double confidence = 0.0;
  double cls_norm = 0.0;
  double scale = 1.0;
};

struct CurvePoint {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 when the bin is empty
};

struct Diagnostics {
  std::vector<DiagnosticRow> rows;  // dataset order
  std::vector<CurvePoint> curve;    // equal-width bins over the CLS-norm range
  double pearson = 0.0;
  double spearman = 0.0;
  ScaleSummary scale;
};

Diagnostics diagnose(const Model& model, const Dataset& data, std::size_t bins = 15);
Diagnostics diagnose_rows(std::vector<DiagnosticRow> rows, std::size_t bins = 15);

std::string diagnostics_csv(const Diagnostics& d);
std::string curve_csv(const Diagnostics& d);
std::string history_csv(const std::vector<EpochDiagnostics>& history);

// bin_lo,bin_hi,count,acc,conf,gap
std::string reliability_csv(const std::vector<BinStats>& bins);
std::vector<BinStats> parse_reliability_csv(const std::string& text);
// 640x480 bar chart: one <rect class="bar"> per bin plus the identity diagonal.
std::string reliability_svg(const std::vector<BinStats>& bins, const std::string& title);

/// Writes `<stem>.csv` and `<stem>.svg`.
void emit_reliability(const std::vector<BinStats>& bins, const std::string& title, const std::filesystem::path& stem);

std::string summary_text(const RunConfig& config, const MetricReport& report, const Diagnostics& diag,
                         const std::vector<EpochDiagnostics>& history, std::size_t param_total, std::size_t head_params);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// %.17g
std::string exact(double v);

}  // namespace calattn

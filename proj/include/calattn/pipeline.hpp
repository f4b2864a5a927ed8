#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "calattn/checkpoint.hpp"
#include "calattn/config.hpp"
#include "calattn/report.hpp"
#include "calattn/train.hpp"

namespace calattn {

struct RunArtifacts {
  Checkpoint checkpoint;
  std::vector<EpochDiagnostics> history;
  MetricReport report;
  Diagnostics diagnostics;  // on the test split
  std::filesystem::path output_dir;
};

/// Trains, evaluates and writes every run file into config.output_dir:
/// report.csv, diagnostics.csv, cls_norm_curve.csv, history.csv,
/// reliability_{preT,postT}.{csv,svg}, checkpoint.{manifest,blob} and
/// summary.txt.
RunArtifacts run_training(const RunConfig& config, const std::filesystem::path& base_dir = ".",
                          const EpochCallback& on_epoch = {});

/// Re-evaluates a checkpoint on the data its config describes and writes
/// the evaluation files (everything except the checkpoint and history).
RunArtifacts run_evaluation(const Checkpoint& ckpt, const RunConfig& config, const std::filesystem::path& base_dir = ".");

// Data prepared with the checkpoint's normalization statistics.
PreparedData prepare_for_checkpoint(const Checkpoint& ckpt, const RunConfig& config,
                                    const std::filesystem::path& base_dir);

// Reliability bins of the test split at T (1 for pre-T).
std::vector<BinStats> reliability_bins(const Model& model, const Dataset& test, double T, std::size_t bins);

}  // namespace calattn

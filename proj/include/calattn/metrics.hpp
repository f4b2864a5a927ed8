#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace calattn {

struct Prediction {
  double confidence = 0.0;
  int predicted = 0;
  int label = 0;
  bool correct = false;
  std::vector<double> probs;  // empty when only the top label is known
  std::optional<double> cls_norm;
  std::optional<double> scale;

  // Top label of `probs` (first index on ties).
  static Prediction from_probs(std::span<const double> probs, int label);
};

struct PredictionBatch {
  std::vector<Prediction> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  bool has_probs() const;
  double accuracy() const;
};

// probs: [N, classes] row-major.
PredictionBatch make_batch(std::span<const double> probs, std::size_t classes, std::span<const int> labels);

struct BinStats {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double acc = 0.0;
  double conf = 0.0;
  double gap = 0.0;
};

enum class Binning { equal_width, equal_mass };

/// equal_width bins are ((m-1)/M, m/M] with confidence 0 in the first bin;
/// empty bins are kept. equal_mass sorts by confidence (stable) and splits
/// into contiguous groups whose sizes differ by at most one, larger first.
std::vector<BinStats> bin_stats(const PredictionBatch& batch, std::size_t M, Binning scheme);

// 1-based equal-width bin of a confidence.
std::size_t equal_width_bin(double confidence, std::size_t M);

struct ReliabilityTable {
  std::vector<BinStats> bins;
  std::size_t total = 0;
  double ece = 0.0;
  double mce = 0.0;
};

ReliabilityTable reliability_table(const PredictionBatch& batch, std::size_t M = 15);

// Count-weighted mean gap; the reduction shared by ece and ada_ece.
double weighted_gap(std::span<const BinStats> bins, std::size_t total);

double ece(const PredictionBatch& batch, std::size_t M = 15);
double mce(const PredictionBatch& batch, std::size_t M = 15);
double ada_ece(const PredictionBatch& batch, std::size_t M = 15);
double classwise_ece(const PredictionBatch& batch, std::size_t M = 15);
double smece(const PredictionBatch& batch, double bandwidth = 0.05);

/// Probability that a correct sample outranks an incorrect one by
/// confidence, ties counted one half.
double auroc(const PredictionBatch& batch);

struct Hcfp {
  std::size_t count = 0;
  double per_thousand = 0.0;
};
Hcfp hcfp(const PredictionBatch& batch, double tau = 0.90);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);

// Average ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> values);

}  // namespace calattn

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "calattn/config.hpp"
#include "calattn/data.hpp"
#include "calattn/model.hpp"

namespace calattn {

/// Train / validation / test sets after subsetting and normalization.
struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
  ChannelStats stats;
};

// Relative dataset paths resolve against `base_dir`.
PreparedData prepare_data(const RunConfig& config, const std::filesystem::path& base_dir = ".");

// Independent streams derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// SGD with heavy-ball momentum. L2 weight decay is added to the gradient of
/// tensors whose name ends in ".weight".
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  // Applies one step and clears the gradients.
  void step(std::vector<NamedTensor>& params, double lr);
  static bool decays(const std::string& name);

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

struct EpochDiagnostics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double mean_s = 1.0;
  double cv_s = 0.0;
  double mean_cls_norm = 0.0;
  double pearson_norm_conf = 0.0;  // NaN when either side is constant
  double spearman_norm_conf = 0.0;
  double val_ece = 0.0;
  double val_accuracy = 0.0;
};

struct ScaleSummary {
  double mean = 0.0;
  double cv = 0.0;
  double min = 0.0;
  double max = 0.0;
};

ScaleSummary summarize_scale(std::span<const double> s);

// Diagnostics of `model` on `data` (loss and lr left to the caller).
EpochDiagnostics evaluate_epoch(const Model& model, const Dataset& data, std::size_t bins = 15);

struct TrainResult {
  Model model;
  std::vector<EpochDiagnostics> history;
};

using EpochCallback = std::function<void(const EpochDiagnostics&)>;

/// Runs the configured number of epochs. Non-finite losses raise
/// NonFiniteValue.
TrainResult train(const RunConfig& config, const PreparedData& data, const EpochCallback& on_epoch = {});

// Mean loss of one optimization step over `indices` of `data`.
double train_step(Model& model, const Dataset& data, std::span<const std::size_t> indices, const LossConfig& loss,
                  Sgd& sgd, double lr);

}  // namespace calattn

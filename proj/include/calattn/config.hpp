#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "calattn/losses.hpp"
#include "calattn/vit.hpp"

namespace calattn {

struct LrStage {
  std::size_t epochs = 0;
  double lr = 0.0;
};

struct OptimizerConfig {
  std::vector<LrStage> lr_stages{{30, 0.05}, {20, 0.005}, {10, 0.0005}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

enum class DataKind { mnist, synthetic };

struct DataConfig {
  DataKind kind = DataKind::mnist;
  std::string images = "data/mnist/mnist5k-images-idx3-ubyte";
  std::string labels = "data/mnist/mnist5k-labels-idx1-ubyte";
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  double val_fraction = 0.05;
  bool normalize = true;
  // synthetic only
  std::size_t per_class = 500;
  double separation = 3.0;
};

struct EvalConfig {
  std::size_t bins = 15;
  double hcfp_tau = 0.90;
  double smece_bandwidth = 0.05;
  bool fit_nll = false;
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimizerConfig optimizer;
  DataConfig data;
  EvalConfig eval;
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  void validate() const;
};

using KeyValues = std::map<std::string, std::string>;

/// Dotted keys for every field, e.g. "model.dim", "optimizer.lr_stages".
KeyValues to_key_values(const RunConfig& config);

/// Applies `values` on top of `base`. Unknown keys and unparsable values
/// raise ConfigError.
RunConfig apply_key_values(RunConfig base, const KeyValues& values);

/// Parses a nested YAML mapping into dotted keys. Sequences are rejected.
KeyValues read_config_file(const std::filesystem::path& path);
KeyValues parse_config_text(const std::string& text);

// Emits the nested document for `config`; parsing it gives `config` back.
std::string render_config(const RunConfig& config);

// "30:0.05,20:0.005" <-> stages.
std::vector<LrStage> parse_lr_stages(const std::string& text);
std::string format_lr_stages(const std::vector<LrStage>& stages);

// Learning rate in force during 0-based `epoch`.
double lr_at_epoch(const OptimizerConfig& optimizer, std::size_t epoch);

std::string to_string(DataKind kind);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

}  // namespace calattn

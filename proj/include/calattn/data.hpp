#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calattn/tensor.hpp"

namespace calattn {

struct Dataset {
  Tensor images;  // [N, channels, H, W]
  std::vector<int> labels;
  std::string name;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct SplitSpec {
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
};

/// Reads an IDX image/label pair (magics 0x803 and 0x801). Pixels are
/// mapped to [0, 1] by /255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t classes = 10);

/// Writes single-channel images back as bytes (round(x * 255), clamped).
void write_idx(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

/// Gaussian classes with means separation * e_k / sqrt(2) (pairwise distance
/// `separation`), unit noise, sample i labelled i % classes.
Dataset synth_gaussians(std::size_t classes, std::size_t per_class, const Shape& image, double separation,
                        std::uint64_t seed);

// Uniform draw from [0, n) by rejection, identical on every platform.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

Dataset subset(const Dataset& data, std::span<const std::size_t> indices, const std::string& name);

/// Shuffles then takes floor(N * val_fraction) samples for validation.
std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec);

/// Two disjoint seed-selected subsets of sizes `first` and `second`.
std::pair<Dataset, Dataset> disjoint_subsets(const Dataset& data, std::size_t first, std::size_t second,
                                             std::uint64_t seed);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

ChannelStats channel_stats(const Dataset& data);

// (x - mean) / std per channel.
Dataset normalize(const Dataset& data, const ChannelStats& stats);
Dataset denormalize(const Dataset& data, const ChannelStats& stats);

}  // namespace calattn

#pragma once

#include <filesystem>

#include "calattn/config.hpp"
#include "calattn/data.hpp"
#include "calattn/model.hpp"

namespace calattn {

/// Trained parameters plus what is needed to evaluate them again.
struct Checkpoint {
  RunConfig config;
  std::size_t epoch = 0;
  ChannelStats stats;  // input normalization used in training
  Model model;
};

/// Writes `<stem>.manifest` (text: config echo, normalization, one line per
/// tensor with shape and offset) and `<stem>.blob` (little-endian float64).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);

// Accepts the stem or either file path.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path blob_path(const std::filesystem::path& stem);

}  // namespace calattn

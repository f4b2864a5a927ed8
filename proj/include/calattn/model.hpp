#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "calattn/calib_head.hpp"
#include "calattn/vit.hpp"

namespace calattn {

/// Backbone plus the optional calibration head.
struct Model {
  ModelConfig config;
  ViTParams backbone;
  std::optional<CalibHeadParams> head;

  // Backbone tensors first, then the head's "calattn." tensors.
  std::vector<NamedTensor> named_parameters();
  std::size_t value_count();
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

struct ModelOutput {
  BackboneOutput backbone;
  std::optional<ad::Var> scale;  // [B, 1] when the head is enabled
  ad::Var calibrated_logits;     // logits / s, or the raw logits
};

ModelOutput forward_model(ad::Tape& tape, const Model& model, const Tensor& images,
                          Binding binding = Binding::frozen);

/// Per-sample outputs of a frozen forward pass.
struct Inference {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::vector<double> logits;             // raw classifier logits [N, C]
  std::vector<double> calibrated_logits;  // logits / s [N, C]
  std::vector<double> scale;              // s per sample (1 without a head)
  std::vector<double> z_cls;              // [N, d]

  std::span<const double> logits_row(std::size_t i) const { return {logits.data() + i * classes, classes}; }
  std::span<const double> calibrated_row(std::size_t i) const {
    return {calibrated_logits.data() + i * classes, classes};
  }
  std::span<const double> z_row(std::size_t i) const { return {z_cls.data() + i * dim, dim}; }
};

// images: [N, C, H, W]; evaluated in chunks of `batch_size`.
Inference infer(const Model& model, const Tensor& images, std::size_t batch_size = 64);

// Rows [first, first+count) of a [N, ...] tensor.
Tensor slice_batch(const Tensor& images, std::size_t first, std::size_t count);

}  // namespace calattn

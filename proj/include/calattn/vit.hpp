#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calattn/autodiff.hpp"
#include "calattn/tensor.hpp"

namespace calattn {

/// What the calibration head reads from the encoder output.
enum class HeadInput { cls, patch_mean, concat };

std::string to_string(HeadInput input);
HeadInput head_input_from_string(const std::string& name);

struct ModelConfig {
  std::size_t image_h = 28;
  std::size_t image_w = 28;
  std::size_t channels = 1;
  std::size_t patch = 7;
  std::size_t dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t classes = 10;
  std::size_t calattn_hidden = 128;
  bool calattn_enabled = true;
  HeadInput calattn_input = HeadInput::cls;

  std::size_t num_patches() const { return (image_h / patch) * (image_w / patch); }
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t mlp_hidden() const { return mlp_ratio * dim; }
  std::size_t head_input_dim() const { return calattn_input == HeadInput::concat ? 2 * dim : dim; }

  // Throws ConfigError on any violated invariant.
  void validate() const;
};

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor q_weight, k_weight, v_weight, out_weight;  // [d, d]
  Tensor ln2_gain, ln2_bias;
  Tensor fc1_weight, fc1_bias;  // [hidden, d], [hidden]
  Tensor fc2_weight, fc2_bias;  // [d, hidden], [d]
};

struct ViTParams {
  Tensor patch_weight, patch_bias;  // [d, P*P*C], [d]
  Tensor cls_token;                 // [d]
  Tensor pos_embed;                 // [N+1, d]
  std::vector<BlockParams> blocks;
  Tensor final_ln_gain, final_ln_bias;
  Tensor classifier_weight, classifier_bias;  // [C, d], [C]
};

using NamedTensor = std::pair<std::string, Tensor*>;

ViTParams init_vit(const ModelConfig& config, std::mt19937_64& rng);
// Stable order; names are the checkpoint keys.
std::vector<NamedTensor> named_parameters(ViTParams& params);

// Exact parameter counts by shape summation.
std::size_t backbone_param_count(const ModelConfig& config);
// Backbone plus the calibration head when it is enabled.
std::size_t param_count(const ModelConfig& config);

/// How parameters enter a tape: trainable ones collect gradients, frozen ones
/// are read-only views.
enum class Binding { frozen, trainable };
ad::Var bind(ad::Tape& tape, const Tensor& param, Binding binding);

// images: [B, C, H, W] -> [B*N, P*P*C], patches in raster order, each
// flattened as (channel, row, col).
Tensor patchify(const Tensor& images, const ModelConfig& config);

ad::Var patch_embed(ad::Tape& tape, const Tensor& images, const ModelConfig& config,
                    const ViTParams& params, Binding binding);
ad::Var assemble_sequence(ad::Var tokens, const ViTParams& params, std::size_t batch, Binding binding);
// Pre-norm block: z + MSA(LN(z)), then z + MLP(LN(z)).
ad::Var encoder_block(ad::Var seq, const BlockParams& block, std::size_t batch, std::size_t heads,
                      Binding binding);
// Attention probabilities the block would use for `seq` ([B*(N+1), d]).
Tensor block_attention_weights(const Tensor& seq, const BlockParams& block, std::size_t batch,
                               std::size_t heads);

struct BackboneOutput {
  ad::Var z_cls;         // [B, d], after the final LayerNorm
  ad::Var logits;        // [B, C]
  ad::Var head_feature;  // [B, d] or [B, 2d]
};

BackboneOutput forward(ad::Tape& tape, const Tensor& images, const ModelConfig& config,
                       const ViTParams& params, Binding binding = Binding::frozen);

double cls_norm(std::span<const double> z);

}  // namespace calattn

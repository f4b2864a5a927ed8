#include "calattn/vit.hpp"

#include <cmath>

#include "calattn/calib_head.hpp"
#include "calattn/errors.hpp"

namespace calattn {
namespace {

constexpr double kInitStd = 0.02;

Tensor normal_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, kInitStd);
  for (double& v : t.data) v = nd(rng);
  return t;
}

}  // namespace

std::string to_string(HeadInput input) {
  switch (input) {
    case HeadInput::cls: return "cls";
    case HeadInput::patch_mean: return "patch_mean";
    case HeadInput::concat: return "concat";
  }
  return "cls";
}

HeadInput head_input_from_string(const std::string& name) {
  if (name == "cls") return HeadInput::cls;
  if (name == "patch_mean") return HeadInput::patch_mean;
  if (name == "concat") return HeadInput::concat;
  throw ConfigError("unknown calattn input '" + name + "' (expected cls, patch_mean or concat)");
}

void ModelConfig::validate() const {
  if (patch == 0 || image_h == 0 || image_w == 0 || channels == 0) throw ConfigError("image and patch extents must be positive");
  if (image_h % patch != 0 || image_w % patch != 0) {
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " not divisible by patch " + std::to_string(patch));
  }
  if (dim < 2) throw ConfigError("model dim must be >= 2");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be >= 1");
  if (classes < 2) throw ConfigError("classes must be >= 2");
  if (calattn_hidden < 1) throw ConfigError("calattn_hidden must be >= 1");
}

ViTParams init_vit(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t hidden = config.mlp_hidden();
  ViTParams p;
  p.patch_weight = normal_tensor({d, config.patch_dim()}, rng);
  p.patch_bias = Tensor({d});
  p.cls_token = normal_tensor({d}, rng);
  p.pos_embed = normal_tensor({config.seq_len(), d}, rng);
  for (std::size_t l = 0; l < config.depth; ++l) {
    BlockParams b;
    b.ln1_gain = Tensor({d}, 1.0);
    b.ln1_bias = Tensor({d});
    b.q_weight = normal_tensor({d, d}, rng);
    b.k_weight = normal_tensor({d, d}, rng);
    b.v_weight = normal_tensor({d, d}, rng);
    b.out_weight = normal_tensor({d, d}, rng);
    b.ln2_gain = Tensor({d}, 1.0);
    b.ln2_bias = Tensor({d});
    b.fc1_weight = normal_tensor({hidden, d}, rng);
    b.fc1_bias = Tensor({hidden});
    b.fc2_weight = normal_tensor({d, hidden}, rng);
    b.fc2_bias = Tensor({d});
    p.blocks.push_back(std::move(b));
  }
  p.final_ln_gain = Tensor({d}, 1.0);
  p.final_ln_bias = Tensor({d});
  p.classifier_weight = normal_tensor({config.classes, d}, rng);
  p.classifier_bias = Tensor({config.classes});
  return p;
}

std::vector<NamedTensor> named_parameters(ViTParams& p) {
  std::vector<NamedTensor> out{
      {"patch_embed.weight", &p.patch_weight},
      {"patch_embed.bias", &p.patch_bias},
      {"cls_token", &p.cls_token},
      {"pos_embed", &p.pos_embed},
  };
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    BlockParams& b = p.blocks[l];
    const std::string pre = "blocks." + std::to_string(l) + ".";
    out.insert(out.end(), {
                              {pre + "ln1.gain", &b.ln1_gain},
                              {pre + "ln1.bias", &b.ln1_bias},
                              {pre + "attn.q.weight", &b.q_weight},
                              {pre + "attn.k.weight", &b.k_weight},
                              {pre + "attn.v.weight", &b.v_weight},
                              {pre + "attn.out.weight", &b.out_weight},
                              {pre + "ln2.gain", &b.ln2_gain},
                              {pre + "ln2.bias", &b.ln2_bias},
                              {pre + "mlp.fc1.weight", &b.fc1_weight},
                              {pre + "mlp.fc1.bias", &b.fc1_bias},
                              {pre + "mlp.fc2.weight", &b.fc2_weight},
                              {pre + "mlp.fc2.bias", &b.fc2_bias},
                          });
  }
  out.insert(out.end(), {
                            {"final_ln.gain", &p.final_ln_gain},
                            {"final_ln.bias", &p.final_ln_bias},
                            {"classifier.weight", &p.classifier_weight},
                            {"classifier.bias", &p.classifier_bias},
                        });
  return out;
}

std::size_t backbone_param_count(const ModelConfig& c) {
  const std::size_t d = c.dim;
  const std::size_t hidden = c.mlp_hidden();
  const std::size_t block = 2 * d + 4 * d * d + 2 * d + (hidden * d + hidden) + (d * hidden + d);
  return (d * c.patch_dim() + d) + d + c.seq_len() * d + c.depth * block + 2 * d + (c.classes * d + c.classes);
}

std::size_t param_count(const ModelConfig& c) {
  return backbone_param_count(c) + (c.calattn_enabled ? head_param_count(c.head_input_dim(), c.calattn_hidden) : 0);
}

ad::Var bind(ad::Tape& tape, const Tensor& param, Binding binding) {
  // Trainable binding needs a mutable gradient slot; callers that train own
  // the parameters exclusively.
  return binding == Binding::trainable ? tape.param(const_cast<Tensor&>(param)) : tape.view(param);
}

Tensor patchify(const Tensor& images, const ModelConfig& config) {
  const std::size_t C = config.channels, H = config.image_h, W = config.image_w, P = config.patch;
  if (images.rank() != 4 || images.shape[1] != C || images.shape[2] != H || images.shape[3] != W) {
    throw ShapeMismatch("images [" + shape_to_string(images.shape) + "] vs config " + std::to_string(C) + "x" +
                        std::to_string(H) + "x" + std::to_string(W));
  }
  if (H % P != 0 || W % P != 0) throw ShapeMismatch("image not divisible by patch size");
  const std::size_t B = images.shape[0];
  const std::size_t gh = H / P, gw = W / P;
  Tensor out(Shape{B * gh * gw, C * P * P});
  std::size_t r = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t py = 0; py < gh; ++py) {
      for (std::size_t px = 0; px < gw; ++px, ++r) {
        double* dst = out.data.data() + r * C * P * P;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t dy = 0; dy < P; ++dy)
            for (std::size_t dx = 0; dx < P; ++dx)
              *dst++ = images.data[((b * C + c) * H + py * P + dy) * W + px * P + dx];
      }
    }
  }
  return out;
}

ad::Var patch_embed(ad::Tape& tape, const Tensor& images, const ModelConfig& config, const ViTParams& params,
                    Binding binding) {
  ad::Var patches = tape.constant(patchify(images, config));
  return ad::linear(patches, bind(tape, params.patch_weight, binding), bind(tape, params.patch_bias, binding));
}

ad::Var assemble_sequence(ad::Var tokens, const ViTParams& params, std::size_t batch, Binding binding) {
  ad::Tape& tape = *tokens.tape;
  return ad::assemble_sequence(tokens, bind(tape, params.cls_token, binding), bind(tape, params.pos_embed, binding),
                               batch);
}

ad::Var encoder_block(ad::Var seq, const BlockParams& b, std::size_t batch, std::size_t heads, Binding binding) {
  ad::Tape& tape = *seq.tape;
  const std::size_t rows = seq.value().rows();
  if (batch == 0 || rows % batch != 0) throw ShapeMismatch("sequence rows not divisible by batch");
  const std::size_t T = rows / batch;

  ad::Var u = ad::layer_norm_rows(seq, bind(tape, b.ln1_gain, binding), bind(tape, b.ln1_bias, binding));
  ad::Var q = ad::linear(u, bind(tape, b.q_weight, binding));
  ad::Var k = ad::linear(u, bind(tape, b.k_weight, binding));
  ad::Var v = ad::linear(u, bind(tape, b.v_weight, binding));
  ad::Var attn = ad::linear(ad::attention(q, k, v, batch, T, heads), bind(tape, b.out_weight, binding));
  ad::Var z = ad::add(seq, attn);

  ad::Var w = ad::layer_norm_rows(z, bind(tape, b.ln2_gain, binding), bind(tape, b.ln2_bias, binding));
  ad::Var hidden = ad::gelu(ad::linear(w, bind(tape, b.fc1_weight, binding), bind(tape, b.fc1_bias, binding)));
  ad::Var mlp = ad::linear(hidden, bind(tape, b.fc2_weight, binding), bind(tape, b.fc2_bias, binding));
  return ad::add(z, mlp);
}

Tensor block_attention_weights(const Tensor& seq, const BlockParams& b, std::size_t batch, std::size_t heads) {
  ad::Tape tape;
  ad::Var u = ad::layer_norm_rows(tape.view(seq), tape.view(b.ln1_gain), tape.view(b.ln1_bias));
  ad::Var q = ad::linear(u, tape.view(b.q_weight));
  ad::Var k = ad::linear(u, tape.view(b.k_weight));
  return ad::attention_weights(q.value(), k.value(), batch, seq.rows() / batch, heads);
}

BackboneOutput forward(ad::Tape& tape, const Tensor& images, const ModelConfig& config, const ViTParams& params,
                       Binding binding) {
  config.validate();
  if (params.blocks.size() != config.depth) throw ShapeMismatch("parameter depth does not match config");
  const std::size_t B = images.rank() == 4 ? images.shape[0] : 0;
  const std::size_t T = config.seq_len();
  ad::Var z = assemble_sequence(patch_embed(tape, images, config, params, binding), params, B, binding);
  for (const BlockParams& block : params.blocks) z = encoder_block(z, block, B, config.heads, binding);
  z = ad::layer_norm_rows(z, bind(tape, params.final_ln_gain, binding), bind(tape, params.final_ln_bias, binding));

  std::vector<std::size_t> cls_rows(B);
  for (std::size_t b = 0; b < B; ++b) cls_rows[b] = b * T;
  ad::Var z_cls = ad::gather_rows(z, cls_rows);
  ad::Var logits =
      ad::linear(z_cls, bind(tape, params.classifier_weight, binding), bind(tape, params.classifier_bias, binding));

  ad::Var feature = z_cls;
  if (config.calattn_input != HeadInput::cls) {
    ad::Var patch_mean = ad::block_row_mean(z, T, 1, T - 1);
    feature = config.calattn_input == HeadInput::patch_mean ? patch_mean : ad::concat_cols(z_cls, patch_mean);
  }
  return {z_cls, logits, feature};
}

double cls_norm(std::span<const double> z) {
  double total = 0.0;
  for (double v : z) total += v * v;
  return std::sqrt(total);
}

}  // namespace calattn

#include "calattn/model.hpp"

#include <algorithm>
#include <random>

#include "calattn/errors.hpp"

namespace calattn {

std::vector<NamedTensor> Model::named_parameters() {
  auto out = calattn::named_parameters(backbone);
  if (head) {
    auto h = calattn::named_parameters(*head);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

std::size_t Model::value_count() {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t->size();
  return n;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m{config, init_vit(config, rng), std::nullopt};
  if (config.calattn_enabled) m.head = head_init(config.head_input_dim(), config.calattn_hidden, rng);
  return m;
}

ModelOutput forward_model(ad::Tape& tape, const Model& model, const Tensor& images, Binding binding) {
  ModelOutput out{forward(tape, images, model.config, model.backbone, binding), std::nullopt, {}};
  out.calibrated_logits = out.backbone.logits;
  if (model.head) {
    out.scale = predict_scale(out.backbone.head_feature, *model.head, binding);
    out.calibrated_logits = ad::divide_rows(out.backbone.logits, *out.scale);
  }
  return out;
}

Tensor slice_batch(const Tensor& images, std::size_t first, std::size_t count) {
  if (images.rank() == 0 || first + count > images.shape[0]) throw ShapeMismatch("batch slice out of range");
  Shape shape = images.shape;
  shape[0] = count;
  const std::size_t stride = images.size() / images.shape[0];
  const auto begin = images.data.begin() + static_cast<std::ptrdiff_t>(first * stride);
  return Tensor(shape, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * stride)));
}

Inference infer(const Model& model, const Tensor& images, std::size_t batch_size) {
  if (images.rank() != 4) throw ShapeMismatch("images must be [N, C, H, W]");
  if (batch_size == 0) batch_size = 1;
  const std::size_t N = images.shape[0];
  Inference res;
  res.samples = N;
  res.classes = model.config.classes;
  res.dim = model.config.dim;
  res.logits.reserve(N * res.classes);
  res.calibrated_logits.reserve(N * res.classes);
  res.scale.reserve(N);
  res.z_cls.reserve(N * res.dim);
  for (std::size_t first = 0; first < N; first += batch_size) {
    const std::size_t count = std::min(batch_size, N - first);
    ad::Tape tape;
    ModelOutput out = forward_model(tape, model, slice_batch(images, first, count), Binding::frozen);
    const auto& l = out.backbone.logits.value().data;
    const auto& cl = out.calibrated_logits.value().data;
    const auto& z = out.backbone.z_cls.value().data;
    res.logits.insert(res.logits.end(), l.begin(), l.end());
    res.calibrated_logits.insert(res.calibrated_logits.end(), cl.begin(), cl.end());
    res.z_cls.insert(res.z_cls.end(), z.begin(), z.end());
    if (out.scale) {
      const auto& s = out.scale->value().data;
      res.scale.insert(res.scale.end(), s.begin(), s.end());
    } else {
      res.scale.insert(res.scale.end(), count, 1.0);
    }
  }
  return res;
}

}  // namespace calattn

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "calattn/autodiff.hpp"
#include "calattn/tensor.hpp"
#include "calattn/vit.hpp"

namespace calattn {

inline constexpr double kScaleFloor = 1e-6;

// softplus(neutral_scale_bias()) == 1, so an untouched head divides logits by ~1.
double neutral_scale_bias();

/// Per-sample temperature head: s = softplus(w2 . GELU(W1 f + b1) + b2) + eps.
struct CalibHeadParams {
  Tensor fc1_weight;  // [h, d_in]
  Tensor fc1_bias;    // [h]
  Tensor fc2_weight;  // [h]
  Tensor fc2_bias;    // [1]
  double eps = kScaleFloor;

  std::size_t input_dim() const { return fc1_weight.cols(); }
  std::size_t hidden() const { return fc1_bias.size(); }
};

/// Positive per-sample temperature.
struct Scale {
  double value = 1.0;
};

// W1 ~ N(0, 0.02), b1 = 0, w2 = 0, b2 = ln(e - 1).
CalibHeadParams head_init(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng);
// Checkpoint names carry the "calattn." prefix.
std::vector<NamedTensor> named_parameters(CalibHeadParams& head);
std::size_t head_param_count(std::size_t input_dim, std::size_t hidden);

Scale predict_scale(std::span<const double> feature, const CalibHeadParams& head);
// features [B, d_in] -> s [B, 1].
ad::Var predict_scale(ad::Var features, const CalibHeadParams& head, Binding binding);

// softmax(logits / s). Throws NonPositiveScale unless s > 0.
std::vector<double> calibrate_logits(std::span<const double> logits, Scale s);

// The first-order expression (y_hat[c] - 1[y = c]) (l[c] - sum_j y_hat[j] l[j]) / s
// evaluated at the predicted class c = argmax(logits). Diagnostic only: it is
// not the derivative of the cross-entropy with respect to s.
double scale_grad_ce(std::span<const double> logits, Scale s, int label);

// Exact d/ds of CE(softmax(l/s), y) + lambda * ||softmax(l/s) - e_y||^2.
double combined_scale_grad(std::span<const double> logits, Scale s, int label, double lambda);

// Minimizes the combined loss over s in [lo, hi] by golden-section search.
// A loss that is constant over the domain yields the midpoint.
double optimal_scale_oracle(std::span<const double> logits, int label, double lambda, double lo = 1e-3,
                            double hi = 50.0);

}  // namespace calattn

#include "calattn/calib_head.hpp"

#include <algorithm>
#include <cmath>

#include "calattn/errors.hpp"
#include "calattn/losses.hpp"

namespace calattn {

double neutral_scale_bias() { return std::log(std::expm1(1.0)); }

CalibHeadParams head_init(std::size_t input_dim, std::size_t hidden, std::mt19937_64& rng) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("calibration head extents must be >= 1");
  CalibHeadParams head;
  head.fc1_weight = Tensor({hidden, input_dim});
  std::normal_distribution<double> nd(0.0, 0.02);
  for (double& v : head.fc1_weight.data) v = nd(rng);
  head.fc1_bias = Tensor({hidden});
  head.fc2_weight = Tensor({hidden});
  head.fc2_bias = Tensor({1}, neutral_scale_bias());
  return head;
}

std::vector<NamedTensor> named_parameters(CalibHeadParams& head) {
  return {
      {"calattn.fc1.weight", &head.fc1_weight},
      {"calattn.fc1.bias", &head.fc1_bias},
      {"calattn.fc2.weight", &head.fc2_weight},
      {"calattn.fc2.bias", &head.fc2_bias},
  };
}

std::size_t head_param_count(std::size_t input_dim, std::size_t hidden) {
  return hidden * input_dim + hidden + hidden + 1;
}

Scale predict_scale(std::span<const double> feature, const CalibHeadParams& head) {
  const std::size_t d = head.input_dim();
  if (feature.size() != d) {
    throw ShapeMismatch("head expects " + std::to_string(d) + " features, got " + std::to_string(feature.size()));
  }
  double pre = head.fc2_bias[0];
  for (std::size_t j = 0; j < head.hidden(); ++j) {
    double a = head.fc1_bias[j];
    for (std::size_t i = 0; i < d; ++i) a += head.fc1_weight[j * d + i] * feature[i];
    pre += head.fc2_weight[j] * ad::gelu_value(a);
  }
  return Scale{ad::softplus_value(pre) + head.eps};
}

ad::Var predict_scale(ad::Var features, const CalibHeadParams& head, Binding binding) {
  ad::Tape& tape = *features.tape;
  ad::Var hidden = ad::gelu(ad::linear(features, bind(tape, head.fc1_weight, binding), bind(tape, head.fc1_bias, binding)));
  ad::Var pre = ad::linear(hidden, bind(tape, head.fc2_weight, binding), bind(tape, head.fc2_bias, binding));
  return ad::add_scalar(ad::softplus(pre), head.eps);
}

std::vector<double> calibrate_logits(std::span<const double> logits, Scale s) {
  if (!(s.value > 0.0) || !std::isfinite(s.value)) throw NonPositiveScale("scale " + std::to_string(s.value));
  return ad::softmax(logits, s.value);
}

namespace {

// Returns softmax(l/s) and sum_j p_j l_j.
std::pair<std::vector<double>, double> scaled_probs(std::span<const double> logits, double s) {
  if (!(s > 0.0)) throw NonPositiveScale("scale " + std::to_string(s));
  auto p = ad::softmax(logits, s);
  double mean_logit = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) mean_logit += p[j] * logits[j];
  return {std::move(p), mean_logit};
}

void check_label(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ShapeMismatch("label " + std::to_string(label) + " outside " + std::to_string(logits.size()) + " classes");
  }
}

}  // namespace

double scale_grad_ce(std::span<const double> logits, Scale s, int label) {
  check_label(logits, label);
  const auto [p, mean_logit] = scaled_probs(logits, s.value);
  const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double hit = static_cast<std::size_t>(label) == top ? 1.0 : 0.0;
  return (p[top] - hit) * (logits[top] - mean_logit) / s.value;
}

double combined_scale_grad(std::span<const double> logits, Scale s, int label, double lambda) {
  check_label(logits, label);
  const auto [p, mean_logit] = scaled_probs(logits, s.value);
  const double inv_s2 = 1.0 / (s.value * s.value);
  // d p_c / d s = -p_c (l_c - mean_logit) / s^2
  const auto y = static_cast<std::size_t>(label);
  const double ce = (logits[y] - mean_logit) * inv_s2;
  double brier = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double target = c == y ? 1.0 : 0.0;
    brier -= 2.0 * (p[c] - target) * p[c] * (logits[c] - mean_logit) * inv_s2;
  }
  return ce + lambda * brier;
}

double optimal_scale_oracle(std::span<const double> logits, int label, double lambda, double lo, double hi) {
  check_label(logits, label);
  if (!(lo > 0.0) || !(hi > lo)) throw NonPositiveScale("oracle domain must satisfy 0 < lo < hi");
  std::vector<double> scaled(logits.size());
  auto loss = [&](double s) {
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / s;
    return combined_loss_from_logits(scaled, label, lambda);
  };
  const double mid = 0.5 * (lo + hi);
  const double f_lo = loss(lo), f_hi = loss(hi), f_mid = loss(mid);
  if (f_lo == f_mid && f_mid == f_hi) return mid;

  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = loss(c), fd = loss(d);
  for (int it = 0; it < 40; ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = loss(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = loss(d);
    }
  }
  double best = 0.5 * (a + b);
  double f_best = loss(best);
  if (f_lo <= f_best) {
    best = lo;
    f_best = f_lo;
  }
  if (f_hi < f_best) best = hi;
  return best;
}

}  // namespace calattn

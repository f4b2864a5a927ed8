#include "calattn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "calattn/errors.hpp"

namespace calattn {
namespace {

constexpr double kTinyProb = 1e-300;

std::size_t checked_label(std::size_t classes, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw ShapeMismatch("label " + std::to_string(label) + " outside " + std::to_string(classes) + " classes");
  }
  return static_cast<std::size_t>(label);
}

double safe_neg_log(double p) {
  if (!(p >= kTinyProb)) throw DegenerateProb("probability " + std::to_string(p) + " too small for a log loss");
  return -std::log(p);
}

double focal_gamma(const LossConfig& config, double p_label) {
  if (config.focal_schedule && p_label < 0.25) return 5.0;
  return config.gamma;
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ce: return "ce";
    case LossKind::brier: return "brier";
    case LossKind::ce_brier: return "ce_brier";
    case LossKind::focal: return "focal";
    case LossKind::label_smooth: return "label_smooth";
  }
  return "ce";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "ce") return LossKind::ce;
  if (name == "brier") return LossKind::brier;
  if (name == "ce_brier") return LossKind::ce_brier;
  if (name == "focal") return LossKind::focal;
  if (name == "label_smooth") return LossKind::label_smooth;
  throw ConfigError("unknown loss kind '" + name + "'");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("loss.gamma must be >= 0");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("loss.alpha must lie in [0, 1)");
}

double cross_entropy(std::span<const double> probs, int label) {
  return safe_neg_log(probs[checked_label(probs.size(), label)]);
}

double brier(std::span<const double> probs, int label) {
  const std::size_t y = checked_label(probs.size(), label);
  double total = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double diff = probs[c] - (c == y ? 1.0 : 0.0);
    total += diff * diff;
  }
  return total;
}

double combined(std::span<const double> probs, int label, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  return cross_entropy(probs, label) + lambda * brier(probs, label);
}

double focal(std::span<const double> probs, int label, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  const double p = probs[checked_label(probs.size(), label)];
  return std::pow(1.0 - p, gamma) * safe_neg_log(p);
}

double label_smooth_ce(std::span<const double> probs, int label, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in [0, 1)");
  const std::size_t y = checked_label(probs.size(), label);
  double loss = (1.0 - alpha) * safe_neg_log(probs[y]);
  if (alpha == 0.0) return loss;
  double spread = 0.0;
  for (double p : probs) spread += safe_neg_log(p);
  return loss + alpha / static_cast<double>(probs.size()) * spread;
}

double cross_entropy_from_logits(std::span<const double> logits, int label) {
  const std::size_t y = checked_label(logits.size(), label);
  // Shifted by the max so equal logits give log C exactly at any magnitude.
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - top);
  return std::log(total) - (logits[y] - top);
}

double combined_loss_from_logits(std::span<const double> logits, int label, double lambda) {
  const auto probs = ad::softmax(logits);
  return cross_entropy_from_logits(logits, label) + lambda * brier(probs, label);
}

double loss_and_grad(std::span<const double> logits, int label, const LossConfig& config, std::span<double> grad) {
  const std::size_t C = logits.size();
  const std::size_t y = checked_label(C, label);
  const auto p = ad::softmax(logits);
  const double lse = ad::log_sum_exp(logits);
  const double log_py = logits[y] - lse;
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != C) throw ShapeMismatch("gradient buffer size");

  // Adds the softmax pullback of dL/dp (given as `dp`) into grad.
  auto pull_back = [&](const std::vector<double>& dp, double weight) {
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += dp[c] * p[c];
    for (std::size_t j = 0; j < C; ++j) grad[j] += weight * p[j] * (dp[j] - dot);
  };
  auto brier_terms = [&](double weight) {
    double total = 0.0;
    std::vector<double> dp(C);
    for (std::size_t c = 0; c < C; ++c) {
      const double diff = p[c] - (c == y ? 1.0 : 0.0);
      total += diff * diff;
      dp[c] = 2.0 * diff;
    }
    if (want_grad) pull_back(dp, weight);
    return total;
  };
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);

  switch (config.kind) {
    case LossKind::ce:
    case LossKind::ce_brier: {
      double loss = -log_py;
      if (want_grad) {
        for (std::size_t j = 0; j < C; ++j) grad[j] = p[j] - (j == y ? 1.0 : 0.0);
      }
      if (config.kind == LossKind::ce_brier) loss += config.lambda * brier_terms(config.lambda);
      return loss;
    }
    case LossKind::brier:
      return brier_terms(1.0);
    case LossKind::focal: {
      const double py = p[y];
      const double gamma = focal_gamma(config, py);
      const double q = 1.0 - py;
      const double loss = -std::pow(q, gamma) * log_py;
      if (want_grad) {
        // dL/dp_y * p_y, with the (1-p)^(gamma-1) term taken as 0 when it
        // is multiplied by gamma = 0 or by (1-p) = 0.
        const double lead = (gamma == 0.0 || q == 0.0) ? 0.0 : gamma * std::pow(q, gamma - 1.0) * py * log_py;
        const double scale = lead - std::pow(q, gamma);
        for (std::size_t j = 0; j < C; ++j) grad[j] = scale * ((j == y ? 1.0 : 0.0) - p[j]);
      }
      return loss;
    }
    case LossKind::label_smooth: {
      const double off = config.alpha / static_cast<double>(C);
      double loss = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double q = (c == y ? 1.0 - config.alpha : 0.0) + off;
        loss -= q * (logits[c] - lse);
        if (want_grad) grad[c] = p[c] - q;
      }
      return loss;
    }
  }
  return 0.0;
}

ad::Var batch_loss(ad::Var logits, std::span<const int> labels, const LossConfig& config) {
  const Tensor& tl = logits.value();
  const std::size_t B = tl.rows(), C = tl.cols();
  if (labels.size() != B) throw ShapeMismatch("one label per logit row required");
  if (B == 0) throw EmptyBatch("loss over zero samples");
  auto grads = std::make_shared<std::vector<double>>(B * C);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    total += loss_and_grad(tl.row(b), labels[b], config, std::span<double>(grads->data() + b * C, C));
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  return logits.tape->record(Tensor(Shape{}, {total * inv_b}), {logits.id},
                             [il = logits.id, grads, inv_b](ad::Tape& t, std::size_t self) {
                               const double g = t.tensor(self).grad[0] * inv_b;
                               auto gl = t.grad(il);
                               for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * (*grads)[i];
                             });
}

}  // namespace calattn

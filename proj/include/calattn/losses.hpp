#pragma once

#include <span>
#include <string>

#include "calattn/autodiff.hpp"

namespace calattn {

enum class LossKind { ce, brier, ce_brier, focal, label_smooth };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::ce_brier;
  double lambda = 0.1;
  double gamma = 3.0;
  // Focal "53" schedule: gamma 5 while p_y < 0.25, `gamma` otherwise.
  bool focal_schedule = false;
  double alpha = 0.1;

  void validate() const;
};

// Probability-space losses for one sample. `label` indexes `probs`.
double cross_entropy(std::span<const double> probs, int label);
double brier(std::span<const double> probs, int label);
double combined(std::span<const double> probs, int label, double lambda);
double focal(std::span<const double> probs, int label, double gamma);
double label_smooth_ce(std::span<const double> probs, int label, double alpha);

// Logit-space forms, stable for arbitrarily peaked distributions.
double cross_entropy_from_logits(std::span<const double> logits, int label);
double combined_loss_from_logits(std::span<const double> logits, int label, double lambda);

/// Loss of softmax(logits) under `config`; writes d loss / d logits into
/// `grad` when it is non-empty.
double loss_and_grad(std::span<const double> logits, int label, const LossConfig& config,
                     std::span<double> grad = {});

/// Mean per-sample loss over the rows of `logits` [B, C].
ad::Var batch_loss(ad::Var logits, std::span<const int> labels, const LossConfig& config);

}  // namespace calattn

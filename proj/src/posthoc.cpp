#include "calattn/posthoc.hpp"

#include <cmath>

#include "calattn/autodiff.hpp"
#include "calattn/errors.hpp"
#include "calattn/losses.hpp"
#include "calattn/metrics.hpp"

namespace calattn {

namespace {

void check_rows(std::span<const double> logits, std::size_t classes, std::span<const int> labels) {
  if (labels.empty()) throw EmptyBatch("temperature fit over zero samples");
  if (classes == 0 || logits.size() != classes * labels.size()) throw ShapeMismatch("logits do not match labels");
}

}  // namespace

TemperatureGrid TemperatureGrid::standard() {
  TemperatureGrid g;
  for (int k = 1; k <= 100; ++k) g.values.push_back(k / 10.0);
  return g;
}

TemperatureGrid TemperatureGrid::single(double t) { return TemperatureGrid{{t}}; }

void TemperatureGrid::validate() const {
  if (values.empty()) throw ConfigError("empty temperature grid");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0)) throw NonPositiveTemperature("grid value " + std::to_string(values[i]));
    if (i > 0 && !(values[i] > values[i - 1])) throw ConfigError("temperature grid must be strictly increasing");
  }
}

std::vector<double> apply_temperature(std::span<const double> logits, double T) {
  if (!(T > 0.0)) throw NonPositiveTemperature("T = " + std::to_string(T));
  return ad::softmax(logits, T);
}

double ece_at_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T,
                          std::size_t M) {
  check_rows(logits, classes, labels);
  PredictionBatch batch;
  batch.samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = apply_temperature(logits.subspan(i * classes, classes), T);
    Prediction pred = Prediction::from_probs(p, labels[i]);
    pred.probs.clear();
    batch.samples.push_back(std::move(pred));
  }
  return ece(batch, M);
}

double nll_at_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T) {
  check_rows(logits, classes, labels);
  if (!(T > 0.0)) throw NonPositiveTemperature("T = " + std::to_string(T));
  std::vector<double> scaled(classes);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < classes; ++c) scaled[c] = logits[i * classes + c] / T;
    total += cross_entropy_from_logits(scaled, labels[i]);
  }
  return total / static_cast<double>(labels.size());
}

TemperatureFit fit_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels,
                               const TemperatureGrid& grid, std::size_t M, FitCriterion criterion) {
  check_rows(logits, classes, labels);
  grid.validate();
  TemperatureFit best;
  best.criterion = criterion;
  bool first = true;
  for (double T : grid.values) {
    const double v = criterion == FitCriterion::ece ? ece_at_temperature(logits, classes, labels, T, M)
                                                    : nll_at_temperature(logits, classes, labels, T);
    if (first || v < best.value) {
      best.T = T;
      best.value = v;
      first = false;
    }
  }
  return best;
}

}  // namespace calattn

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace calattn {

/// Candidate temperatures, strictly increasing and positive.
struct TemperatureGrid {
  std::vector<double> values;

  // 0.1, 0.2, ..., 10.0 (k/10 for k = 1..100; zero is excluded).
  static TemperatureGrid standard();
  static TemperatureGrid single(double t);
  void validate() const;
};

// softmax(logits / T).
std::vector<double> apply_temperature(std::span<const double> logits, double T);

enum class FitCriterion { ece, nll };

struct TemperatureFit {
  double T = 1.0;
  double value = 0.0;  // criterion at T
  FitCriterion criterion = FitCriterion::ece;
};

/// Grid search for the temperature minimizing the criterion on
/// [N, classes] validation logits. Ties go to the smallest T.
TemperatureFit fit_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels,
                               const TemperatureGrid& grid = TemperatureGrid::standard(), std::size_t M = 15,
                               FitCriterion criterion = FitCriterion::ece);

// ECE and mean NLL of all rows at one temperature.
double ece_at_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T,
                          std::size_t M = 15);
double nll_at_temperature(std::span<const double> logits, std::size_t classes, std::span<const int> labels, double T);

}  // namespace calattn

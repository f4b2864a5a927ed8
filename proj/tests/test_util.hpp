#pragma once

#include <random>

#include "calattn/tensor.hpp"

namespace calattn::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> nd(0.0, scale);
  for (double& v : t.data) v = nd(rng);
  return t;
}

}  // namespace calattn::testing

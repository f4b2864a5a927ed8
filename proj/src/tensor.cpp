#include "calattn/tensor.hpp"

#include <cmath>
#include <numeric>

#include "calattn/errors.hpp"

namespace calattn {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_to_string(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(shape[i]);
  }
  return out;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, Buffer values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_size(shape) != data.size()) {
    throw ShapeMismatch("shape [" + shape_to_string(shape) + "] holds " +
                        std::to_string(shape_size(shape)) + " values, got " +
                        std::to_string(data.size()));
  }
}

Tensor::Tensor(Shape s, std::span<const double> values) : Tensor(std::move(s), Buffer(values.begin(), values.end())) {}

std::size_t Tensor::rows() const {
  if (shape.empty()) return 1;
  return cols() == 0 ? 0 : data.size() / cols();
}

std::size_t Tensor::cols() const { return shape.empty() ? 1 : shape.back(); }

std::span<double> Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace calattn

#pragma once

#include <cstddef>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace calattn {

using Shape = std::vector<std::size_t>;

// Vectorized reductions peel a different number of leading elements
// depending on the buffer address, which changes rounding. Fixing the
// alignment of every numeric buffer keeps runs bitwise reproducible.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient slot.
///
/// `grad` stays empty until a backward pass reaches the tensor; an empty
/// gradient means "never touched", not "zero".
struct Tensor {
  Shape shape;
  Buffer data;
  Buffer grad;
  std::optional<std::size_t> node_id;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, Buffer values);
  Tensor(Shape s, std::span<const double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  // Leading extents collapsed; the last extent is the row width.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  std::span<double> ensure_grad();
  void zero_grad() { grad.clear(); }

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols(), cols()};
  }
};

bool all_finite(std::span<const double> values);

}  // namespace calattn

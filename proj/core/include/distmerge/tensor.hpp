// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace distmerge {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
inline constexpr std::size_t kTensorAlignment = 64;

// Allocator whose value-less construct() leaves floats uninitialized. Blocks
// are 64-byte aligned so vectorized reductions split work identically on
// every run; with malloc alignment the summation order follows the address.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlignment}));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), std::align_val_t{kTensorAlignment});
  }
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major float32 array. Plain value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Contents unspecified; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value) { return Tensor({}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  const float* ptr() const { return data_.data(); }
  float* ptr() { return data_.data(); }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Value of a single-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  /// Shapes equal and every float bit pattern identical.
  bool bit_equal(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float, detail::DefaultInitAllocator<float>> data_;
};

}  // namespace distmerge

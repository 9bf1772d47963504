// Copyright 2026 The distmerge Authors
// SPDX-License-Identifier: Apache-2.0

#include "distmerge/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace distmerge {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (numel(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " needs " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.data_.resize(numel(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

float Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("tensor: item() on shape " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != data_.size()) {
    throw ShapeError("tensor: cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() ||
          std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

}  // namespace distmerge

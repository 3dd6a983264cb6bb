// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/tensor.hpp"

#include <cmath>
#include <cstring>

#include "pft/error.hpp"

namespace pft {

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), values_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != values_.size()) {
    fail(ErrorKind::dimension, "tensor: shape " + shape_str(shape_) + " does not hold " +
                                   std::to_string(values_.size()) + " values");
  }
}

float Tensor::item() const {
  if (values_.size() != 1) {
    fail(ErrorKind::contract, "item() on tensor of shape " + shape_str(shape_));
  }
  return values_[0];
}

std::optional<std::size_t> Tensor::first_non_finite() const noexcept {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) return i;
  }
  return std::nullopt;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != values_.size()) {
    fail(ErrorKind::dimension,
         "reshape: " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         (values_.empty() ||
          std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0);
}

}  // namespace pft

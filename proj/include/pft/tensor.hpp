// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pft {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Dense row-major f32 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float v) { return Tensor({}, std::vector<float>{v}); }
  static Tensor from(Shape shape, std::initializer_list<float> values) {
    return Tensor(std::move(shape), std::vector<float>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<float> data() noexcept { return values_; }
  std::span<const float> data() const noexcept { return values_; }
  float* ptr() noexcept { return values_.data(); }
  const float* ptr() const noexcept { return values_.data(); }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  /// Value of a single-element tensor.
  float item() const;

  std::optional<std::size_t> first_non_finite() const noexcept;
  bool all_finite() const noexcept { return !first_non_finite().has_value(); }

  /// Same values, new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  /// True when shapes match and every value has the same bit pattern.
  bool bitwise_equal(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<float> values_;
};

}  // namespace pft

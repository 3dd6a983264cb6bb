// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// 4-bit blockwise weight quantization with optional double quantization of
// the per-block scales.
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pft/autodiff.hpp"

namespace pft {

enum class CodebookId : std::uint8_t { nf4 = 0, uniform4 = 1 };

std::string_view to_string(CodebookId id) noexcept;
CodebookId codebook_from_string(std::string_view name);

struct QuantConfig {
  std::size_t block_size = 64;
  CodebookId codebook = CodebookId::nf4;
  bool double_quant = true;
  std::size_t dq_group = 256;

  void validate() const;
  bool operator==(const QuantConfig&) const = default;
};

/// 16 ascending levels in [-1, 1].
struct Codebook {
  std::array<float, 16> values{};

  /// Largest distance between adjacent levels.
  float max_gap() const noexcept;
  /// Index of the level nearest to v; ties go to the lower index.
  std::uint8_t nearest(float v) const noexcept;
};

/// Normal-float codebook: 8 negative and 7 positive standard-normal quantiles
/// plus an exact zero at index 8, divided by the largest magnitude.
Codebook build_nf4_codebook();
/// 16 evenly spaced levels from -1 to 1.
Codebook build_uniform4_codebook();
const Codebook& codebook(CodebookId id);

/// Inverse of the standard normal CDF (Acklam's rational approximation
/// refined by one Halley step on erfc).
double normal_quantile(double p);

struct QuantizedTensor {
  Shape shape;
  QuantConfig config;
  std::vector<std::uint8_t> packed;  // two codes per byte, element 2i in the low nibble
  std::vector<float> absmax;         // per-block scales when !double_quant
  // Double-quantized scales: per-block 8-bit codes, per-group affine (scale, offset).
  std::vector<std::uint8_t> scale_codes;
  std::vector<float> group_scale;
  std::vector<float> group_offset;

  std::size_t numel() const noexcept;
  std::size_t num_blocks() const noexcept;
  std::size_t num_groups() const noexcept;
  std::uint8_t code(std::size_t i) const noexcept;
  /// Scale of block b as used by dequantization.
  float block_scale(std::size_t b) const noexcept;
  /// Throws format error if buffer lengths disagree with shape and config.
  void validate() const;
  bool operator==(const QuantizedTensor&) const = default;
};

QuantizedTensor quantize_blockwise(const Tensor& w, const QuantConfig& config);
Tensor dequantize_blockwise(const QuantizedTensor& q);
/// Dequantizes elements [begin, begin + out.size()) into `out`.
void dequantize_range(const QuantizedTensor& q, std::size_t begin, std::span<float> out);

/// y = x W'^T for a quantized weight [out, in], dequantizing one row at a time.
/// Bitwise equal to ops::linear(x, dequantize_blockwise(q)). Gradient flows to x only.
Var quantized_linear_forward(std::shared_ptr<const QuantizedTensor> q, const Var& x);
Var quantized_linear_forward(const QuantizedTensor& q, const Var& x);

/// Storage cost per weight: codes plus scale metadata.
double memory_footprint_bits(const QuantConfig& config);
double memory_footprint_bits(const QuantizedTensor& q);

}  // namespace pft

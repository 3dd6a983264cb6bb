// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/quant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pft/error.hpp"

namespace pft {

std::string_view to_string(CodebookId id) noexcept {
  return id == CodebookId::nf4 ? "nf4" : "uniform4";
}

CodebookId codebook_from_string(std::string_view name) {
  if (name == "nf4") return CodebookId::nf4;
  if (name == "uniform4") return CodebookId::uniform4;
  fail(ErrorKind::config, "quant: unknown codebook '" + std::string(name) + "' (expected nf4 or uniform4)");
}

void QuantConfig::validate() const {
  if (block_size < 2) fail(ErrorKind::config, "quant: block_size must be >= 2");
  if (dq_group < 2) fail(ErrorKind::config, "quant: dq_group must be >= 2");
}

float Codebook::max_gap() const noexcept {
  float gap = 0.0f;
  for (std::size_t i = 1; i < values.size(); ++i) gap = std::max(gap, values[i] - values[i - 1]);
  return gap;
}

std::uint8_t Codebook::nearest(float v) const noexcept {
  std::uint8_t best = 0;
  float best_dist = std::fabs(v - values[0]);
  for (std::uint8_t i = 1; i < 16; ++i) {
    const float d = std::fabs(v - values[i]);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::contract, "normal_quantile: p must be in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

Codebook build_nf4_codebook() {
  // Probability range trimmed symmetrically so the outermost quantile is finite:
  // the tails start halfway between 1/32 and 1/30 from the edge.
  const double offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
  std::vector<double> levels{0.0};
  for (int i = 0; i < 8; ++i) levels.push_back(-normal_quantile(offset + (0.5 - offset) * i / 8.0));
  for (int i = 0; i < 7; ++i) levels.push_back(normal_quantile(offset + (0.5 - offset) * i / 7.0));
  std::sort(levels.begin(), levels.end());
  const double top = normal_quantile(offset);
  Codebook cb;
  for (std::size_t i = 0; i < 16; ++i) cb.values[i] = static_cast<float>(levels[i] / top);
  return cb;
}

Codebook build_uniform4_codebook() {
  Codebook cb;
  for (int i = 0; i < 16; ++i) cb.values[i] = static_cast<float>(-1.0 + 2.0 * i / 15.0);
  return cb;
}

const Codebook& codebook(CodebookId id) {
  static const Codebook nf4 = build_nf4_codebook();
  static const Codebook uniform4 = build_uniform4_codebook();
  return id == CodebookId::nf4 ? nf4 : uniform4;
}

std::size_t QuantizedTensor::numel() const noexcept { return pft::numel(shape); }

std::size_t QuantizedTensor::num_blocks() const noexcept {
  return (numel() + config.block_size - 1) / config.block_size;
}

std::size_t QuantizedTensor::num_groups() const noexcept {
  return (num_blocks() + config.dq_group - 1) / config.dq_group;
}

std::uint8_t QuantizedTensor::code(std::size_t i) const noexcept {
  const std::uint8_t byte = packed[i / 2];
  return (i % 2 == 0) ? (byte & 0x0f) : (byte >> 4);
}

float QuantizedTensor::block_scale(std::size_t b) const noexcept {
  if (!config.double_quant) return absmax[b];
  const std::size_t g = b / config.dq_group;
  return group_offset[g] + static_cast<float>(scale_codes[b]) * group_scale[g];
}

void QuantizedTensor::validate() const {
  config.validate();
  auto bad = [](const std::string& what, std::size_t got, std::size_t want) {
    fail(ErrorKind::format, "quantized tensor: " + what + " has " + std::to_string(got) +
                                " entries, expected " + std::to_string(want));
  };
  if (packed.size() != (numel() + 1) / 2) bad("packed", packed.size(), (numel() + 1) / 2);
  if (config.double_quant) {
    if (scale_codes.size() != num_blocks()) bad("scale_codes", scale_codes.size(), num_blocks());
    if (group_scale.size() != num_groups()) bad("group_scale", group_scale.size(), num_groups());
    if (group_offset.size() != num_groups()) bad("group_offset", group_offset.size(), num_groups());
    if (!absmax.empty()) bad("absmax", absmax.size(), 0);
  } else {
    if (absmax.size() != num_blocks()) bad("absmax", absmax.size(), num_blocks());
    if (!scale_codes.empty()) bad("scale_codes", scale_codes.size(), 0);
  }
}

QuantizedTensor quantize_blockwise(const Tensor& w, const QuantConfig& config) {
  config.validate();
  if (auto bad = w.first_non_finite()) {
    fail(ErrorKind::numeric, "quantize_blockwise: non-finite value at index " + std::to_string(*bad));
  }
  const Codebook& cb = codebook(config.codebook);
  QuantizedTensor q;
  q.shape = w.shape();
  q.config = config;
  const std::size_t n = w.size();
  const std::size_t blocks = q.num_blocks();
  q.packed.assign((n + 1) / 2, 0);
  std::vector<float> scales(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t begin = b * config.block_size;
    const std::size_t end = std::min(n, begin + config.block_size);
    float amax = 0.0f;
    for (std::size_t i = begin; i < end; ++i) amax = std::max(amax, std::fabs(w[i]));
    const float scale = amax == 0.0f ? 1.0f : amax;
    scales[b] = scale;
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint8_t c = cb.nearest(w[i] / scale);
      q.packed[i / 2] |= static_cast<std::uint8_t>(i % 2 == 0 ? c : c << 4);
    }
  }
  if (!config.double_quant) {
    q.absmax = std::move(scales);
    return q;
  }
  const std::size_t groups = q.num_groups();
  q.scale_codes.assign(blocks, 0);
  q.group_scale.assign(groups, 0.0f);
  q.group_offset.assign(groups, 0.0f);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * config.dq_group;
    const std::size_t end = std::min(blocks, begin + config.dq_group);
    const auto [lo_it, hi_it] = std::minmax_element(scales.begin() + begin, scales.begin() + end);
    const float lo = *lo_it;
    const float step = (*hi_it - lo) / 255.0f;
    q.group_offset[g] = lo;
    q.group_scale[g] = step;
    for (std::size_t b = begin; b < end; ++b) {
      const float code = step > 0.0f ? std::nearbyint((scales[b] - lo) / step) : 0.0f;
      q.scale_codes[b] = static_cast<std::uint8_t>(std::clamp(code, 0.0f, 255.0f));
    }
  }
  return q;
}

void dequantize_range(const QuantizedTensor& q, std::size_t begin, std::span<float> out) {
  const Codebook& cb = codebook(q.config.codebook);
  const std::size_t bs = q.config.block_size;
  std::size_t block = begin / bs;
  float scale = q.block_scale(block);
  for (std::size_t j = 0; j < out.size(); ++j) {
    const std::size_t i = begin + j;
    if (i / bs != block) {
      block = i / bs;
      scale = q.block_scale(block);
    }
    out[j] = cb.values[q.code(i)] * scale;
  }
}

Tensor dequantize_blockwise(const QuantizedTensor& q) {
  q.validate();
  Tensor w(q.shape);
  dequantize_range(q, 0, w.data());
  return w;
}

Var quantized_linear_forward(std::shared_ptr<const QuantizedTensor> q, const Var& x) {
  const Shape& sx = x.shape();
  if (q->shape.size() != 2 || sx.empty() || sx.back() != q->shape[1]) {
    fail(ErrorKind::dimension, "quantized_linear_forward: incompatible shapes " + shape_str(sx) +
                                   " and " + shape_str(q->shape));
  }
  const std::size_t out = q->shape[0], in = q->shape[1], rows = x.size() / in;
  Shape out_shape = sx;
  out_shape.back() = out;
  Tensor y(out_shape);
  std::vector<float> wrow(in);
  const float* xd = x.value().ptr();
  float* yd = y.ptr();
  for (std::size_t o = 0; o < out; ++o) {
    dequantize_range(*q, o * in, wrow);
    for (std::size_t n = 0; n < rows; ++n) {
      const float* xr = xd + n * in;
      float acc = 0.0f;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wrow[k];
      yd[n * out + o] = acc;
    }
  }
  return make_op_result("quantized_linear", std::move(y), {x}, [q, rows, in, out](Node& self) {
    const Tensor w = dequantize_blockwise(*q);
    const float* wd = w.ptr();
    const float* g = self.grad.data();
    float* gx = self.inputs[0]->grad_buffer().data();
    for (std::size_t n = 0; n < rows; ++n) {
      float* gxr = gx + n * in;
      for (std::size_t o = 0; o < out; ++o) {
        const float go = g[n * out + o];
        const float* wr = wd + o * in;
        for (std::size_t k = 0; k < in; ++k) gxr[k] += go * wr[k];
      }
    }
  });
}

Var quantized_linear_forward(const QuantizedTensor& q, const Var& x) {
  return quantized_linear_forward(std::make_shared<const QuantizedTensor>(q), x);
}

double memory_footprint_bits(const QuantConfig& config) {
  const double bs = static_cast<double>(config.block_size);
  if (!config.double_quant) return 4.0 + 32.0 / bs;
  return 4.0 + 8.0 / bs + 64.0 / (bs * static_cast<double>(config.dq_group));
}

double memory_footprint_bits(const QuantizedTensor& q) { return memory_footprint_bits(q.config); }

}  // namespace pft

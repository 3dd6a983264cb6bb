// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "pft/quant.hpp"
#include "pft/rng.hpp"
#include "support.hpp"

using namespace pft;
using pft::test::kind_of;

namespace {

/// Standard normal quantile by bisection on the CDF written with erfc.
double ppf_bisect(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::array<double, 16> nf4_oracle() {
  const double offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
  std::array<double, 16> v{};
  for (int i = 0; i < 8; ++i) v[i] = -ppf_bisect(offset + (0.5 - offset) * i / 8.0);
  v[8] = 0.0;
  for (int i = 1; i < 8; ++i) v[8 + i] = ppf_bisect(offset + (0.5 - offset) * (7 - i) / 7.0);
  const double top = ppf_bisect(offset);
  for (auto& x : v) x /= top;
  return v;
}

Tensor normal_weights(std::uint64_t seed, Shape shape) {
  Rng rng(seed);
  return gaussian_sample(rng, 0.0f, 0.02f, shape);
}

float block_absmax(const Tensor& w, std::size_t b, std::size_t bs) {
  float m = 0.0f;
  for (std::size_t i = b * bs; i < std::min(w.size(), (b + 1) * bs); ++i) m = std::max(m, std::abs(w[i]));
  return m;
}

}  // namespace

TEST_CASE("normal quantile matches bisection") {
  for (double p : {1e-9, 1e-4, 0.01, 0.0677, 0.3, 0.5, 0.75, 0.9323, 0.999, 1 - 1e-6})
    CHECK(normal_quantile(p) == doctest::Approx(ppf_bisect(p)).epsilon(1e-10));
  CHECK(kind_of([] { normal_quantile(0.0); }) == ErrorKind::contract);
}

TEST_CASE("nf4 codebook matches the quantile construction") {
  const auto& cb = codebook(CodebookId::nf4);
  const auto oracle = nf4_oracle();
  for (std::size_t i = 0; i < 16; ++i) CHECK(cb.values[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
  CHECK(cb.values[0] == -1.0f);
  CHECK(cb.values[8] == 0.0f);
  CHECK(cb.values[15] == 1.0f);
  for (std::size_t i = 1; i < 16; ++i) CHECK(cb.values[i] > cb.values[i - 1]);
  double gap = 0.0;
  for (std::size_t i = 1; i < 16; ++i) gap = std::max(gap, oracle[i] - oracle[i - 1]);
  CHECK(cb.max_gap() == doctest::Approx(gap).epsilon(1e-6));
}

TEST_CASE("uniform codebook and nearest-level ties") {
  const auto& u = codebook(CodebookId::uniform4);
  for (std::size_t i = 0; i < 16; ++i) CHECK(u.values[i] == doctest::Approx(-1.0 + 2.0 * i / 15.0));
  const auto& cb = codebook(CodebookId::nf4);
  for (std::size_t i = 0; i < 16; ++i) CHECK(cb.nearest(cb.values[i]) == i);
  CHECK(cb.nearest(-5.0f) == 0);
  CHECK(cb.nearest(5.0f) == 15);
  Codebook even;
  for (std::size_t i = 0; i < 16; ++i) even.values[i] = static_cast<float>(i);
  CHECK(even.nearest(2.5f) == 2);
  CHECK(codebook_from_string("uniform4") == CodebookId::uniform4);
  CHECK(kind_of([] { codebook_from_string("fp4"); }) == ErrorKind::config);
}

TEST_CASE("round trip error bound without double quantization") {
  const Tensor w = normal_weights(1, {100000});
  QuantConfig qc;
  qc.double_quant = false;
  const auto q = quantize_blockwise(w, qc);
  const Tensor back = dequantize_blockwise(q);
  const double half_gap = codebook(CodebookId::nf4).max_gap() / 2.0;
  std::size_t violations = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t b = i / qc.block_size;
    CHECK(q.block_scale(b) == block_absmax(w, b, qc.block_size));
    const double bound = q.block_scale(b) * half_gap * (1 + 1e-6);
    if (std::abs(static_cast<double>(w[i]) - back[i]) > bound) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("round trip error bound with double quantization") {
  const Tensor w = normal_weights(2, {100000});
  const QuantConfig qc;
  const auto q = quantize_blockwise(w, qc);
  const Tensor back = dequantize_blockwise(q);
  const double half_gap = codebook(CodebookId::nf4).max_gap() / 2.0;
  std::size_t violations = 0;
  double worst_scale_err = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const std::size_t b = i / qc.block_size;
    const double s = block_absmax(w, b, qc.block_size), s_q = q.block_scale(b);
    worst_scale_err = std::max(worst_scale_err, std::abs(s - s_q) / s);
    // Codes come from the exact scale; the stored scale adds |s - s_q| * |code| <= |s - s_q|.
    const double bound = (s * half_gap + std::abs(s - s_q)) * (1 + 1e-6);
    if (std::abs(static_cast<double>(w[i]) - back[i]) > bound) ++violations;
  }
  CHECK(violations == 0);
  CHECK(worst_scale_err < 0.01);
}

TEST_CASE("footprint bits per weight") {
  CHECK(memory_footprint_bits(QuantConfig{}) == 4.0 + 8.0 / 64.0 + 64.0 / 16384.0);
  QuantConfig plain;
  plain.double_quant = false;
  CHECK(memory_footprint_bits(plain) == 4.5);
}

TEST_CASE("quantized linear is bitwise dequantize then linear") {
  for (bool dq : {false, true}) {
    QuantConfig qc;
    qc.double_quant = dq;
    const Tensor w = normal_weights(3, {48, 40});
    const auto q = std::make_shared<const QuantizedTensor>(quantize_blockwise(w, qc));
    Rng rng(4);
    const Var x(gaussian_sample(rng, 0.0f, 1.0f, {3, 5, 40}), true);
    const Var a = quantized_linear_forward(q, x);
    const Var b = ops::linear(x, Var(dequantize_blockwise(*q)), Var());
    REQUIRE(a.shape() == b.shape());
    CHECK(std::memcmp(a.value().ptr(), b.value().ptr(), a.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("partial trailing blocks and ranges") {
  const Tensor w = normal_weights(5, {10, 10});
  const auto q = quantize_blockwise(w, QuantConfig{});
  CHECK(q.num_blocks() == 2);
  CHECK(q.num_groups() == 1);
  CHECK(q.packed.size() == 50);
  const Tensor full = dequantize_blockwise(q);
  std::vector<float> part(37);
  dequantize_range(q, 51, part);
  for (std::size_t i = 0; i < part.size(); ++i) CHECK(part[i] == full[51 + i]);
}

TEST_CASE("zero block and error handling") {
  const Tensor zeros({128});
  const Tensor back = dequantize_blockwise(quantize_blockwise(zeros, QuantConfig{}));
  for (float v : back.data()) CHECK(v == 0.0f);
  Tensor bad({4});
  bad[1] = NAN;
  CHECK(kind_of([&] { quantize_blockwise(bad, QuantConfig{}); }) == ErrorKind::numeric);
  QuantConfig qc;
  qc.block_size = 1;
  CHECK(kind_of([&] { qc.validate(); }) == ErrorKind::config);
  auto q = quantize_blockwise(normal_weights(6, {64}), QuantConfig{});
  q.packed.pop_back();
  CHECK(kind_of([&] { q.validate(); }) == ErrorKind::format);
}

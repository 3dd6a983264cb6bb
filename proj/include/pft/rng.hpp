// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "pft/tensor.hpp"

namespace pft {

/// Serializable snapshot of an Rng.
struct RngState {
  static constexpr std::uint32_t kAlgorithmId = 0x786f7332;  // "xos2": xoshiro256**
  std::uint32_t algorithm_id = kAlgorithmId;
  std::array<std::uint64_t, 4> words{};
  std::optional<double> gaussian_spare;

  bool operator==(const RngState&) const = default;
};

/// xoshiro256** seeded through splitmix64. Normal draws use the polar-free
/// Box-Muller transform in double precision and cache the second value.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  explicit Rng(const RngState& state);

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n), rejection sampled (no modulo bias). n > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  double normal() noexcept;

  /// Derive an independent stream (used to give each subsystem its own Rng).
  Rng fork() noexcept;

  RngState state() const { return state_; }

 private:
  RngState state_;
};

/// Tensor of independent N(mean, stddev^2) draws. stddev == 0 gives a constant tensor.
Tensor gaussian_sample(Rng& rng, float mean, float stddev, const Shape& shape);

}  // namespace pft

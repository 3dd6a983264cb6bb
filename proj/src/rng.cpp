// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/rng.hpp"

#include <cmath>
#include <numbers>

#include "pft/error.hpp"

namespace pft {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& w : state_.words) w = splitmix64(x);
}

Rng::Rng(const RngState& state) : state_(state) {
  if (state.algorithm_id != RngState::kAlgorithmId) {
    fail(ErrorKind::format, "rng: unknown algorithm id " + std::to_string(state.algorithm_id));
  }
}

std::uint64_t Rng::next_u64() noexcept {
  auto& s = state_.words;
  const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
  const std::uint64_t t = s[1] << 17;
  s[2] ^= s[0];
  s[3] ^= s[1];
  s[1] ^= s[2];
  s[0] ^= s[3];
  s[2] ^= t;
  s[3] = rotl(s[3], 45);
  return result;
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) noexcept {
  // Largest multiple of n representable; draws at or above it are rejected.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() noexcept {
  if (state_.gaussian_spare) {
    const double v = *state_.gaussian_spare;
    state_.gaussian_spare.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  state_.gaussian_spare = radius * std::sin(theta);
  return radius * std::cos(theta);
}

Rng Rng::fork() noexcept { return Rng(next_u64() ^ 0x5851f42d4c957f2dULL); }

Tensor gaussian_sample(Rng& rng, float mean, float stddev, const Shape& shape) {
  if (!(stddev >= 0.0f)) fail(ErrorKind::contract, "gaussian_sample: stddev must be >= 0");
  Tensor t(shape, mean);
  if (stddev == 0.0f) return t;
  for (auto& v : t.data()) {
    v = static_cast<float>(static_cast<double>(mean) + static_cast<double>(stddev) * rng.normal());
  }
  return t;
}

}  // namespace pft

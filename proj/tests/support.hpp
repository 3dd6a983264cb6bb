// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pft/corpus.hpp"
#include "pft/error.hpp"
#include "pft/model.hpp"
#include "pft/rng.hpp"

namespace pft::test {

/// Kind of the pft::Error thrown by `f`, or nullopt when it returns normally.
inline std::optional<ErrorKind> kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pft_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline CausalLMConfig tiny_config() {
  CausalLMConfig c;
  c.vocab_size = 24;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.seq_len = 12;
  return c;
}

inline std::vector<std::int32_t> random_ids(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.uniform_index(vocab));
  return ids;
}

/// Fully labelled example of random ids.
inline TrainingExample random_example(Rng& rng, std::size_t n, std::size_t vocab) {
  TrainingExample e;
  e.input_ids = random_ids(rng, n, vocab);
  e.labels = e.input_ids;
  return e;
}

inline std::vector<TrainingExample> random_dataset(std::uint64_t seed, std::size_t count, const CausalLMConfig& c) {
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(random_example(rng, 3 + rng.uniform_index(c.seq_len - 2), c.vocab_size));
  return out;
}

/// max |a - b| / max(|a|, |b|, floor) over elements; pairs with a zero denominator are skipped.
inline double max_rel_error(std::span<const float> a, std::span<const float> b, double floor = 0.0) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(static_cast<double>(a[i])), std::abs(static_cast<double>(b[i])), floor});
    if (den == 0.0) continue;
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - b[i]) / den);
  }
  return worst;
}

/// max |a - b| / max |b|: relative error of the whole tensor in the max norm.
inline double max_norm_rel_error(std::span<const float> a, std::span<const float> b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - b[i]));
    ref = std::max(ref, std::abs(static_cast<double>(b[i])));
  }
  return ref == 0.0 ? diff : diff / ref;
}

inline bool files_equal(const std::filesystem::path& a, const std::filesystem::path& b) {
  auto read = [](const std::filesystem::path& p) {
    std::FILE* f = std::fopen(p.c_str(), "rb");
    std::vector<unsigned char> out;
    if (!f) return out;
    for (int c; (c = std::fgetc(f)) != EOF;) out.push_back(static_cast<unsigned char>(c));
    std::fclose(f);
    return out;
  };
  const auto x = read(a);
  return !x.empty() && x == read(b);
}

}  // namespace pft::test

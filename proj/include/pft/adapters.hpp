// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pft/parameter.hpp"

namespace pft {

class Rng;

/// Training-time switches threaded through a forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

struct LoraConfig {
  std::size_t r = 32;
  float alpha = 32.0f;
  float dropout = 0.05f;
  std::vector<std::string> target_modules{"query_key_value", "dense", "dense_h_to_4h", "dense_4h_to_h"};
  std::string bias = "none";
  std::string task_type = "CAUSAL_LM";
  /// Standard deviation of the Gaussian A init; 0 means 1/sqrt(r).
  float init_std = 0.0f;

  void validate() const;
  float scaling() const noexcept { return alpha / static_cast<float>(r); }
  float a_init_std() const noexcept;
};

/// Low-rank update for one linear: delta(x) = scaling * B(A(drop(x))).
struct LoraAdapter {
  std::string target_name;
  Parameter a;  // [r, d_in]
  Parameter b;  // [d_out, r]
  float scaling = 1.0f;
  float dropout = 0.0f;
  bool merged = false;

  /// scaling * B A as a dense [d_out, d_in] matrix.
  Tensor delta_weight() const;
};

/// y = base_out + scaling * B A drop(x). `base_out` is W x (+ bias).
Var lora_apply(const LoraAdapter& adapter, const Var& x, const Var& base_out, ForwardContext& ctx);

/// Plain-weight convenience: y = W x + scaling * B A drop(x).
Var lora_forward(const LoraAdapter& adapter, const Var& weight, const Var& x, ForwardContext& ctx);

struct BottleneckAdapterConfig {
  std::size_t bottleneck_dim = 16;
  std::string activation = "gelu";

  void validate(std::size_t d_model) const;
};

/// h + U gelu(D h), with D: d -> b and U: b -> d.
struct BottleneckAdapter {
  std::string name;
  Parameter down_weight;  // [b, d]
  Parameter down_bias;    // [b]
  Parameter up_weight;    // [d, b]
  Parameter up_bias;      // [d]

  Var forward(const Var& h) const;
};

}  // namespace pft

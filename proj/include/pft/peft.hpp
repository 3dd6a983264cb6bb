// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pft/adapters.hpp"
#include "pft/model.hpp"
#include "pft/quant.hpp"

namespace pft {

class Rng;

/// True when `name` ends with `suffix` on a dotted-component boundary.
bool matches_target(std::string_view name, std::string_view suffix) noexcept;

/// Adds one LoRA adapter per matched linear and freezes every base parameter.
/// Returns the adapted linear names in model order.
std::vector<std::string> attach_lora(CausalLM& model, const LoraConfig& config, Rng& rng);

bool has_lora(const CausalLM& model) noexcept;
bool has_bottleneck(const CausalLM& model) noexcept;

/// W <- W + scaling * B A for every adapter. Quantized bases are dequantized
/// first. With keep_adapters the adapters stay attached and marked merged.
void merge_lora(CausalLM& model, bool keep_adapters = false);

/// W <- W - scaling * B A on adapters kept by merge_lora(model, true).
void unmerge_lora(CausalLM& model);

/// Adds serial adapters after the attention and MLP sublayers of every block.
void attach_bottleneck(CausalLM& model, const BottleneckAdapterConfig& config, Rng& rng);

struct TrainableSummary {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double ratio = 0.0;
};

/// Exact counts over all parameters, quantized base weights included as frozen.
TrainableSummary trainable_summary(const CausalLM& model);

/// Replaces every per-block linear weight with its 4-bit form (frozen).
void quantize_base(CausalLM& model, const QuantConfig& config);

bool is_quantized(const CausalLM& model) noexcept;

/// Replaces quantized weights by their dequantized f32 values (frozen).
void dequantize_base(CausalLM& model);

}  // namespace pft

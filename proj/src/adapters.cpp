// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/adapters.hpp"

#include <cmath>

#include "pft/error.hpp"

namespace pft {

void LoraConfig::validate() const {
  if (r < 1) fail(ErrorKind::config, "lora: r must be >= 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) fail(ErrorKind::config, "lora: lora_dropout must be in [0, 1)");
  if (target_modules.empty()) fail(ErrorKind::config, "lora: target_modules must not be empty");
  if (bias != "none") fail(ErrorKind::config, "lora: only bias=\"none\" is supported, got \"" + bias + "\"");
  if (task_type != "CAUSAL_LM") fail(ErrorKind::config, "lora: task_type must be CAUSAL_LM");
  if (!(init_std >= 0.0f)) fail(ErrorKind::config, "lora: init_std must be >= 0");
}

float LoraConfig::a_init_std() const noexcept {
  return init_std > 0.0f ? init_std : 1.0f / std::sqrt(static_cast<float>(r));
}

Tensor LoraAdapter::delta_weight() const {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t r = av.dim(0), in = av.dim(1), out = bv.dim(0);
  Tensor dw({out, in});
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t k = 0; k < in; ++k) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < r; ++j) acc += bv[o * r + j] * av[j * in + k];
      dw[o * in + k] = scaling * acc;
    }
  }
  return dw;
}

Var lora_apply(const LoraAdapter& adapter, const Var& x, const Var& base_out, ForwardContext& ctx) {
  if (adapter.merged) return base_out;
  Var h = x;
  if (ctx.training && adapter.dropout > 0.0f) {
    if (!ctx.rng) fail(ErrorKind::contract, "lora: training-mode dropout needs an rng");
    h = ops::dropout(h, adapter.dropout, *ctx.rng);
  }
  Var low = ops::linear(h, adapter.a.var, Var());
  Var up = ops::linear(low, adapter.b.var, Var());
  if (up.shape() != base_out.shape()) {
    fail(ErrorKind::dimension, "lora " + adapter.target_name + ": update shape " + shape_str(up.shape()) +
                                   " vs base output " + shape_str(base_out.shape()));
  }
  return ops::add(base_out, ops::scale(up, adapter.scaling));
}

Var lora_forward(const LoraAdapter& adapter, const Var& weight, const Var& x, ForwardContext& ctx) {
  return lora_apply(adapter, x, ops::linear(x, weight, Var()), ctx);
}

void BottleneckAdapterConfig::validate(std::size_t d_model) const {
  if (bottleneck_dim < 1) fail(ErrorKind::config, "adapter: bottleneck_dim must be >= 1");
  if (bottleneck_dim >= d_model) {
    fail(ErrorKind::config, "adapter: bottleneck_dim " + std::to_string(bottleneck_dim) +
                                " must be smaller than d_model " + std::to_string(d_model));
  }
  if (activation != "gelu") fail(ErrorKind::config, "adapter: only gelu activation is supported");
}

Var BottleneckAdapter::forward(const Var& h) const {
  Var down = ops::gelu(ops::linear(h, down_weight.var, down_bias.var));
  return ops::add(h, ops::linear(down, up_weight.var, up_bias.var));
}

}  // namespace pft

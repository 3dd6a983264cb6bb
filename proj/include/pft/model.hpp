// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Micro decoder-only transformer. Per-block linears carry the names
// query_key_value, dense, dense_h_to_4h and dense_4h_to_h so LoRA target
// lists written for that family of models apply unchanged.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pft/adapters.hpp"
#include "pft/quant.hpp"

namespace pft {

class Rng;

struct CausalLMConfig {
  std::size_t vocab_size = 512;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t seq_len = 128;
  std::size_t mlp_ratio = 4;
  float layer_norm_eps = 1e-5f;

  void validate() const;
  /// Closed-form parameter count of the base architecture (tied output head).
  std::size_t parameter_count() const noexcept;
  bool operator==(const CausalLMConfig&) const = default;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out);

  const std::string& name() const noexcept { return name_; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  Var forward(const Var& x, ForwardContext& ctx) const;

  Parameter weight;  // [out, in]; empty while quantized
  Parameter bias;    // [out]
  std::shared_ptr<const QuantizedTensor> quantized;
  std::unique_ptr<LoraAdapter> lora;

  /// Dense weight, dequantized if needed.
  Tensor dense_weight() const;

 private:
  std::string name_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;
  Var forward(const Var& x, float eps) const;
};

struct Block {
  LayerNorm ln_attn;
  Linear query_key_value;
  Linear dense;
  LayerNorm ln_mlp;
  Linear dense_h_to_4h;
  Linear dense_4h_to_h;
  std::unique_ptr<BottleneckAdapter> adapter_attn;
  std::unique_ptr<BottleneckAdapter> adapter_mlp;
};

class CausalLM {
 public:
  /// Zero-filled model with norms at gain 1.
  explicit CausalLM(CausalLMConfig config);
  CausalLM(CausalLM&&) noexcept = default;
  CausalLM& operator=(CausalLM&&) noexcept = default;
  CausalLM(const CausalLM&) = delete;
  CausalLM& operator=(const CausalLM&) = delete;

  /// Deep copy with no shared tensors (quantized payloads are immutable and shared).
  CausalLM clone() const;

  const CausalLMConfig& config() const noexcept { return config_; }

  /// Logits [batch, T, vocab] for ids laid out row-major as [batch, T].
  Var forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t T,
              ForwardContext& ctx) const;

  /// Every parameter in a fixed order: embeddings, blocks, final norm, then
  /// adapters in block order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name);

  std::vector<Linear*> linears();
  Linear* module_by_name(std::string_view name);
  /// Names of linears that LoRA may target.
  std::vector<std::string> lora_targetable_names() const;

  std::vector<Block>& blocks() noexcept { return blocks_; }
  const std::vector<Block>& blocks() const noexcept { return blocks_; }
  Parameter& token_embedding() noexcept { return tok_emb_; }
  const Parameter& token_embedding() const noexcept { return tok_emb_; }

  void set_all_trainable(bool flag);

 private:
  CausalLMConfig config_;
  Parameter tok_emb_;
  Parameter pos_emb_;
  std::vector<Block> blocks_;
  LayerNorm ln_f_;
};

/// Weights ~ N(0, 0.02^2), biases 0, norm gains 1.
CausalLM init_model(const CausalLMConfig& config, Rng& rng);

struct TrainingExample;

/// Mean next-token cross-entropy over unmasked label positions of one example.
Var lm_loss(const CausalLM& model, const TrainingExample& example, ForwardContext& ctx);

/// Mean next-token loss for [batch, T] ids with aligned labels (-1 masked).
Var lm_loss(const CausalLM& model, std::span<const std::int32_t> ids, std::span<const std::int32_t> labels,
            std::size_t batch, std::size_t T, ForwardContext& ctx);

struct GenerationConfig {
  std::size_t max_new_tokens = 48;
  bool sample = false;       // false = greedy
  float temperature = 1.0f;  // > 0 when sampling
  std::size_t top_k = 0;     // 0 = full vocabulary
  std::optional<std::int32_t> eos_id;
};

/// Autoregressive decoding; returns prompt followed by generated ids.
std::vector<std::int32_t> generate(const CausalLM& model, std::span<const std::int32_t> prompt,
                                   const GenerationConfig& gen, Rng* rng);

}  // namespace pft

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/peft.hpp"

#include "pft/error.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

std::vector<Linear*> linears_of(const CausalLM& model) { return const_cast<CausalLM&>(model).linears(); }

void freeze_base(CausalLM& model) {
  for (Parameter* p : model.parameters()) p->set_trainable(false);
}

std::unique_ptr<BottleneckAdapter> make_bottleneck(const std::string& name, std::size_t d, std::size_t b, Rng& rng) {
  auto a = std::make_unique<BottleneckAdapter>();
  a->name = name;
  a->down_weight = Parameter(name + ".down.weight", gaussian_sample(rng, 0.0f, 0.02f, {b, d}));
  a->down_bias = Parameter(name + ".down.bias", Tensor({b}));
  a->up_weight = Parameter(name + ".up.weight", Tensor({d, b}));
  a->up_bias = Parameter(name + ".up.bias", Tensor({d}));
  return a;
}

void add_delta(Tensor& w, const Tensor& delta, float sign) {
  auto dst = w.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += sign * src[i];
}

}  // namespace

bool matches_target(std::string_view name, std::string_view suffix) noexcept {
  if (suffix.empty() || !name.ends_with(suffix)) return false;
  return suffix.size() == name.size() || name[name.size() - suffix.size() - 1] == '.';
}

bool has_lora(const CausalLM& model) noexcept {
  for (const Linear* l : linears_of(model))
    if (l->lora) return true;
  return false;
}

bool has_bottleneck(const CausalLM& model) noexcept {
  for (const Block& b : model.blocks())
    if (b.adapter_attn || b.adapter_mlp) return true;
  return false;
}

bool is_quantized(const CausalLM& model) noexcept {
  for (const Linear* l : linears_of(model))
    if (l->quantized) return true;
  return false;
}

std::vector<std::string> attach_lora(CausalLM& model, const LoraConfig& config, Rng& rng) {
  config.validate();
  if (has_lora(model)) fail(ErrorKind::state, "attach_lora: model already carries LoRA adapters");
  std::vector<Linear*> selected;
  for (const auto& target : config.target_modules) {
    bool hit = false;
    for (Linear* l : model.linears()) hit = hit || matches_target(l->name(), target);
    if (!hit) fail(ErrorKind::config, "attach_lora: target module '" + target + "' matches no linear");
  }
  for (Linear* l : model.linears()) {
    for (const auto& target : config.target_modules) {
      if (matches_target(l->name(), target)) {
        selected.push_back(l);
        break;
      }
    }
  }
  freeze_base(model);
  std::vector<std::string> names;
  const float std_a = config.a_init_std();
  for (Linear* l : selected) {
    auto ad = std::make_unique<LoraAdapter>();
    ad->target_name = l->name();
    ad->a = Parameter(l->name() + ".lora_A.weight", gaussian_sample(rng, 0.0f, std_a, {config.r, l->in_features()}));
    ad->b = Parameter(l->name() + ".lora_B.weight", Tensor({l->out_features(), config.r}));
    ad->scaling = config.scaling();
    ad->dropout = config.dropout;
    l->lora = std::move(ad);
    names.push_back(l->name());
  }
  return names;
}

void merge_lora(CausalLM& model, bool keep_adapters) {
  if (!has_lora(model)) fail(ErrorKind::state, "merge_lora: model has no LoRA adapters");
  for (Linear* l : model.linears()) {
    if (l->lora && l->lora->merged) fail(ErrorKind::state, "merge_lora: adapters are already merged");
  }
  for (Linear* l : model.linears()) {
    if (!l->lora) continue;
    if (l->quantized) {
      l->weight = Parameter(l->name() + ".weight", dequantize_blockwise(*l->quantized), false);
      l->quantized.reset();
    }
    add_delta(l->weight.mutable_value(), l->lora->delta_weight(), 1.0f);
    if (keep_adapters) {
      l->lora->merged = true;
    } else {
      l->lora.reset();
    }
  }
}

void unmerge_lora(CausalLM& model) {
  bool any = false;
  for (Linear* l : model.linears()) {
    if (!l->lora) continue;
    if (!l->lora->merged) fail(ErrorKind::state, "unmerge_lora: adapter on " + l->name() + " is not merged");
    add_delta(l->weight.mutable_value(), l->lora->delta_weight(), -1.0f);
    l->lora->merged = false;
    any = true;
  }
  if (!any) fail(ErrorKind::state, "unmerge_lora: no adapters are attached");
}

void attach_bottleneck(CausalLM& model, const BottleneckAdapterConfig& config, Rng& rng) {
  const std::size_t d = model.config().d_model;
  config.validate(d);
  if (has_bottleneck(model)) fail(ErrorKind::state, "attach_bottleneck: model already carries bottleneck adapters");
  freeze_base(model);
  auto& blocks = model.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    blocks[i].adapter_attn = make_bottleneck(p + ".adapter_attn", d, config.bottleneck_dim, rng);
    blocks[i].adapter_mlp = make_bottleneck(p + ".adapter_mlp", d, config.bottleneck_dim, rng);
  }
}

TrainableSummary trainable_summary(const CausalLM& model) {
  TrainableSummary s;
  for (const Parameter* p : model.parameters()) {
    s.total += p->value().size();
    if (p->trainable) s.trainable += p->value().size();
  }
  for (const Linear* l : linears_of(model))
    if (l->quantized) s.total += l->quantized->numel();
  s.ratio = s.total ? static_cast<double>(s.trainable) / static_cast<double>(s.total) : 0.0;
  return s;
}

void quantize_base(CausalLM& model, const QuantConfig& config) {
  config.validate();
  if (is_quantized(model)) fail(ErrorKind::state, "quantize_base: model is already quantized");
  for (Linear* l : model.linears()) {
    if (l->lora && l->lora->merged) fail(ErrorKind::state, "quantize_base: unmerge adapters before quantizing");
    l->quantized = std::make_shared<const QuantizedTensor>(quantize_blockwise(l->weight.value(), config));
    l->weight = Parameter{};
    l->bias.set_trainable(false);
  }
}

void dequantize_base(CausalLM& model) {
  for (Linear* l : model.linears()) {
    if (!l->quantized) continue;
    l->weight = Parameter(l->name() + ".weight", dequantize_blockwise(*l->quantized), false);
    l->quantized.reset();
  }
}

}  // namespace pft

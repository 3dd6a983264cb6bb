// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pft/corpus.hpp"
#include "pft/error.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

constexpr float kInitStd = 0.02f;

Parameter copy_param(const Parameter& p) {
  if (!p.var.defined()) return Parameter{};
  return Parameter(p.name, p.value(), p.trainable);
}

LayerNorm make_norm(const std::string& prefix, std::size_t d) {
  return LayerNorm{Parameter(prefix + ".weight", Tensor({d}, 1.0f)), Parameter(prefix + ".bias", Tensor({d}, 0.0f))};
}

std::unique_ptr<BottleneckAdapter> copy_adapter(const std::unique_ptr<BottleneckAdapter>& a) {
  if (!a) return nullptr;
  auto out = std::make_unique<BottleneckAdapter>();
  out->name = a->name;
  out->down_weight = copy_param(a->down_weight);
  out->down_bias = copy_param(a->down_bias);
  out->up_weight = copy_param(a->up_weight);
  out->up_bias = copy_param(a->up_bias);
  return out;
}

void copy_linear(Linear& dst, const Linear& src) {
  dst.weight = copy_param(src.weight);
  dst.bias = copy_param(src.bias);
  dst.quantized = src.quantized;
  if (src.lora) {
    dst.lora = std::make_unique<LoraAdapter>();
    dst.lora->target_name = src.lora->target_name;
    dst.lora->a = copy_param(src.lora->a);
    dst.lora->b = copy_param(src.lora->b);
    dst.lora->scaling = src.lora->scaling;
    dst.lora->dropout = src.lora->dropout;
    dst.lora->merged = src.lora->merged;
  }
}

template <class Fn>
void for_each_linear(std::vector<Block>& blocks, Fn&& fn) {
  for (auto& b : blocks) {
    fn(b.query_key_value);
    fn(b.dense);
    fn(b.dense_h_to_4h);
    fn(b.dense_4h_to_h);
  }
}

}  // namespace

void CausalLMConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorKind::config, "model config: " + what); };
  if (vocab_size < 1) bad("vocab_size must be >= 1");
  if (d_model < 1) bad("d_model must be >= 1");
  if (n_heads < 1) bad("n_heads must be >= 1");
  if (d_model % n_heads != 0) {
    bad("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (n_layers < 1) bad("n_layers must be >= 1");
  if (seq_len < 2) bad("seq_len must be >= 2");
  if (mlp_ratio != 4) bad("mlp_ratio is fixed at 4 (dense_h_to_4h width)");
  if (!(layer_norm_eps > 0.0f)) bad("layer_norm_eps must be > 0");
}

std::size_t CausalLMConfig::parameter_count() const noexcept {
  const std::size_t d = d_model, m = mlp_ratio;
  const std::size_t per_block = (4 + 2 * m) * d * d + (9 + m) * d;
  return vocab_size * d + seq_len * d + n_layers * per_block + 2 * d;
}

Linear::Linear(std::string name, std::size_t in, std::size_t out)
    : weight(name + ".weight", Tensor({out, in})),
      bias(name + ".bias", Tensor({out})),
      name_(std::move(name)),
      in_(in),
      out_(out) {}

Var Linear::forward(const Var& x, ForwardContext& ctx) const {
  Var y = quantized ? ops::add(quantized_linear_forward(quantized, x), bias.var)
                    : ops::linear(x, weight.var, bias.var);
  if (lora) y = lora_apply(*lora, x, y, ctx);
  return y;
}

Tensor Linear::dense_weight() const {
  return quantized ? dequantize_blockwise(*quantized) : weight.value();
}

Var LayerNorm::forward(const Var& x, float eps) const { return ops::layer_norm(x, gain.var, bias.var, eps); }

CausalLM::CausalLM(CausalLMConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.d_model, h4 = config_.mlp_ratio * d;
  tok_emb_ = Parameter("tok_embeddings.weight", Tensor({config_.vocab_size, d}));
  pos_emb_ = Parameter("pos_embeddings.weight", Tensor({config_.seq_len, d}));
  blocks_.resize(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    Block& b = blocks_[i];
    b.ln_attn = make_norm(p + ".ln_attn", d);
    b.query_key_value = Linear(p + ".attn.query_key_value", d, 3 * d);
    b.dense = Linear(p + ".attn.dense", d, d);
    b.ln_mlp = make_norm(p + ".ln_mlp", d);
    b.dense_h_to_4h = Linear(p + ".mlp.dense_h_to_4h", d, h4);
    b.dense_4h_to_h = Linear(p + ".mlp.dense_4h_to_h", h4, d);
  }
  ln_f_ = make_norm("ln_f", d);
}

CausalLM CausalLM::clone() const {
  CausalLM out(config_);
  out.tok_emb_ = copy_param(tok_emb_);
  out.pos_emb_ = copy_param(pos_emb_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& s = blocks_[i];
    Block& d = out.blocks_[i];
    d.ln_attn = LayerNorm{copy_param(s.ln_attn.gain), copy_param(s.ln_attn.bias)};
    d.ln_mlp = LayerNorm{copy_param(s.ln_mlp.gain), copy_param(s.ln_mlp.bias)};
    copy_linear(d.query_key_value, s.query_key_value);
    copy_linear(d.dense, s.dense);
    copy_linear(d.dense_h_to_4h, s.dense_h_to_4h);
    copy_linear(d.dense_4h_to_h, s.dense_4h_to_h);
    d.adapter_attn = copy_adapter(s.adapter_attn);
    d.adapter_mlp = copy_adapter(s.adapter_mlp);
  }
  out.ln_f_ = LayerNorm{copy_param(ln_f_.gain), copy_param(ln_f_.bias)};
  return out;
}

Var CausalLM::forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t T,
                      ForwardContext& ctx) const {
  if (T < 1 || T > config_.seq_len) {
    fail(ErrorKind::input, "forward: sequence length " + std::to_string(T) + " outside [1, " +
                               std::to_string(config_.seq_len) + "]");
  }
  if (ids.size() != batch * T) {
    fail(ErrorKind::dimension, "forward: " + std::to_string(ids.size()) + " ids for batch " +
                                   std::to_string(batch) + " x " + std::to_string(T));
  }
  const std::size_t d = config_.d_model, H = config_.n_heads, hd = d / H;
  const float eps = config_.layer_norm_eps;
  std::vector<std::int32_t> positions(batch * T);
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::int32_t>(i % T);

  Var x = ops::add(ops::embedding(tok_emb_.var, ids, {batch, T}),
                   ops::embedding(pos_emb_.var, positions, {batch, T}));
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (const Block& blk : blocks_) {
    Var qkv = blk.query_key_value.forward(blk.ln_attn.forward(x, eps), ctx);
    auto heads = [&](std::size_t offset) {
      Var s = ops::reshape(ops::slice_last(qkv, offset, d), {batch, T, H, hd});
      return ops::reshape(ops::transpose(s, 1, 2), {batch * H, T, hd});
    };
    Var q = heads(0), k = heads(d), v = heads(2 * d);
    Var scores = ops::scale(ops::matmul(q, ops::transpose(k, 1, 2)), attn_scale);
    Var probs = ops::softmax(ops::causal_mask(scores));
    Var o = ops::reshape(ops::matmul(probs, v), {batch, H, T, hd});
    o = ops::reshape(ops::transpose(o, 1, 2), {batch, T, d});
    Var attn = blk.dense.forward(o, ctx);
    if (blk.adapter_attn) attn = blk.adapter_attn->forward(attn);
    x = ops::add(x, attn);

    Var mlp = blk.dense_4h_to_h.forward(
        ops::gelu(blk.dense_h_to_4h.forward(blk.ln_mlp.forward(x, eps), ctx)), ctx);
    if (blk.adapter_mlp) mlp = blk.adapter_mlp->forward(mlp);
    x = ops::add(x, mlp);
  }
  x = ln_f_.forward(x, eps);
  return ops::linear(x, tok_emb_.var, Var());
}

std::vector<Parameter*> CausalLM::parameters() {
  std::vector<Parameter*> out{&tok_emb_, &pos_emb_};
  auto add_linear = [&](Linear& l) {
    if (!l.quantized) out.push_back(&l.weight);
    out.push_back(&l.bias);
  };
  for (Block& b : blocks_) {
    out.push_back(&b.ln_attn.gain);
    out.push_back(&b.ln_attn.bias);
    add_linear(b.query_key_value);
    add_linear(b.dense);
    out.push_back(&b.ln_mlp.gain);
    out.push_back(&b.ln_mlp.bias);
    add_linear(b.dense_h_to_4h);
    add_linear(b.dense_4h_to_h);
  }
  out.push_back(&ln_f_.gain);
  out.push_back(&ln_f_.bias);
  for (Block& b : blocks_) {
    for (Linear* l : {&b.query_key_value, &b.dense, &b.dense_h_to_4h, &b.dense_4h_to_h}) {
      if (l->lora) {
        out.push_back(&l->lora->a);
        out.push_back(&l->lora->b);
      }
    }
    for (auto* a : {b.adapter_attn.get(), b.adapter_mlp.get()}) {
      if (!a) continue;
      out.push_back(&a->down_weight);
      out.push_back(&a->down_bias);
      out.push_back(&a->up_weight);
      out.push_back(&a->up_bias);
    }
  }
  return out;
}

std::vector<const Parameter*> CausalLM::parameters() const {
  auto ptrs = const_cast<CausalLM*>(this)->parameters();
  return {ptrs.begin(), ptrs.end()};
}

Parameter* CausalLM::find_parameter(std::string_view name) {
  for (Parameter* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

std::vector<Linear*> CausalLM::linears() {
  std::vector<Linear*> out;
  for_each_linear(blocks_, [&](Linear& l) { out.push_back(&l); });
  return out;
}

Linear* CausalLM::module_by_name(std::string_view name) {
  for (Linear* l : linears())
    if (l->name() == name) return l;
  return nullptr;
}

std::vector<std::string> CausalLM::lora_targetable_names() const {
  std::vector<std::string> out;
  for (const Linear* l : const_cast<CausalLM*>(this)->linears()) out.push_back(l->name());
  return out;
}

void CausalLM::set_all_trainable(bool flag) {
  for (Parameter* p : parameters()) p->set_trainable(flag);
}

CausalLM init_model(const CausalLMConfig& config, Rng& rng) {
  CausalLM model(config);
  auto fill = [&](Parameter& p) { p.mutable_value() = gaussian_sample(rng, 0.0f, kInitStd, p.value().shape()); };
  fill(model.token_embedding());
  fill(*model.find_parameter("pos_embeddings.weight"));
  for (Linear* l : model.linears()) fill(l->weight);
  return model;
}

Var lm_loss(const CausalLM& model, std::span<const std::int32_t> ids, std::span<const std::int32_t> labels,
            std::size_t batch, std::size_t T, ForwardContext& ctx) {
  if (labels.size() != ids.size()) {
    fail(ErrorKind::dimension, "lm_loss: " + std::to_string(labels.size()) + " labels for " +
                                   std::to_string(ids.size()) + " ids");
  }
  std::vector<std::int32_t> targets(batch * T, ops::kIgnoreIndex);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t + 1 < T; ++t) targets[b * T + t] = labels[b * T + t + 1];
  Var logits = model.forward(ids, batch, T, ctx);
  return ops::cross_entropy(ops::reshape(logits, {batch * T, model.config().vocab_size}), targets);
}

Var lm_loss(const CausalLM& model, const TrainingExample& example, ForwardContext& ctx) {
  return lm_loss(model, example.input_ids, example.labels, 1, example.input_ids.size(), ctx);
}

std::vector<std::int32_t> generate(const CausalLM& model, std::span<const std::int32_t> prompt,
                                   const GenerationConfig& gen, Rng* rng) {
  if (prompt.empty()) fail(ErrorKind::input, "generate: empty prompt");
  const std::size_t seq_len = model.config().seq_len;
  if (prompt.size() > seq_len) {
    fail(ErrorKind::input, "generate: prompt of " + std::to_string(prompt.size()) +
                               " tokens exceeds context of " + std::to_string(seq_len));
  }
  if (gen.sample) {
    if (!(gen.temperature > 0.0f)) fail(ErrorKind::config, "generate: temperature must be > 0 when sampling");
    if (!rng) fail(ErrorKind::contract, "generate: sampling needs an rng");
  }
  NoGradGuard no_grad;
  ForwardContext ctx;
  std::vector<std::int32_t> seq(prompt.begin(), prompt.end());
  const std::size_t V = model.config().vocab_size;
  for (std::size_t step = 0; step < gen.max_new_tokens; ++step) {
    std::span<const std::int32_t> window(seq);
    if (window.size() > seq_len) window = window.subspan(window.size() - (seq_len - 1));
    Var logits = model.forward(window, 1, window.size(), ctx);
    const float* last = logits.value().ptr() + (window.size() - 1) * V;

    std::int32_t next = 0;
    if (!gen.sample) {
      for (std::size_t j = 1; j < V; ++j)
        if (last[j] > last[next]) next = static_cast<std::int32_t>(j);
    } else {
      std::vector<std::int32_t> order(V);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) { return last[a] > last[b]; });
      const std::size_t keep = gen.top_k == 0 ? V : std::min(gen.top_k, V);
      const double t = gen.temperature;
      const double mx = last[order[0]] / t;
      std::vector<double> weights(keep);
      double total = 0.0;
      for (std::size_t i = 0; i < keep; ++i) {
        weights[i] = std::exp(last[order[i]] / t - mx);
        total += weights[i];
      }
      const double u = rng->uniform() * total;
      double acc = 0.0;
      next = order[keep - 1];
      for (std::size_t i = 0; i < keep; ++i) {
        acc += weights[i];
        if (u < acc) {
          next = order[i];
          break;
        }
      }
    }
    seq.push_back(next);
    if (gen.eos_id && next == *gen.eos_id) break;
  }
  return seq;
}

}  // namespace pft

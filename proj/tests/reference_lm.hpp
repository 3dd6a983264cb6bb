// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Straight-line double-precision forward of the micro transformer, written
// independently of the autodiff graph. Parameters are looked up by name so
// perturbing one entry of the map is a finite-difference probe.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pft/model.hpp"
#include "pft/rng.hpp"

namespace pft::test {

using Mat = std::vector<double>;  // row-major

struct RefModel {
  CausalLMConfig config;
  std::map<std::string, std::vector<double>> params;
  std::map<std::string, double> lora_scaling;  // by linear name

  static RefModel from(const CausalLM& model) {
    RefModel r;
    r.config = model.config();
    for (const Parameter* p : model.parameters()) {
      const auto v = p->value().data();
      r.params[p->name].assign(v.begin(), v.end());
    }
    for (const Block& b : model.blocks()) {
      for (const Linear* l : {&b.query_key_value, &b.dense, &b.dense_h_to_4h, &b.dense_4h_to_h}) {
        if (l->quantized) {
          const auto w = l->dense_weight().data();
          r.params[l->name() + ".weight"].assign(w.begin(), w.end());
        }
        if (l->lora && !l->lora->merged) r.lora_scaling[l->name()] = l->lora->scaling;
      }
    }
    return r;
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }
  const std::vector<double>& at(const std::string& name) const { return params.at(name); }

  /// y[n, out] = x[n, in] W^T + b
  Mat linear(const Mat& x, std::size_t n, std::size_t in, std::size_t out, const std::string& w,
             const std::string& b) const {
    const auto& W = at(w);
    Mat y(n * out, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b.empty() ? 0.0 : at(b)[o];
        for (std::size_t k = 0; k < in; ++k) acc += x[i * in + k] * W[o * in + k];
        y[i * out + o] = acc;
      }
    return y;
  }

  Mat named_linear(const Mat& x, std::size_t n, std::size_t in, std::size_t out, const std::string& name) const {
    Mat y = linear(x, n, in, out, name + ".weight", name + ".bias");
    auto s = lora_scaling.find(name);
    if (s != lora_scaling.end()) {
      const std::size_t r = at(name + ".lora_A.weight").size() / in;
      Mat up = linear(linear(x, n, in, r, name + ".lora_A.weight", ""), n, r, out, name + ".lora_B.weight", "");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += s->second * up[i];
    }
    return y;
  }

  static double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

  Mat layer_norm(const Mat& x, std::size_t n, std::size_t d, const std::string& prefix) const {
    const auto& g = at(prefix + ".weight");
    const auto& b = at(prefix + ".bias");
    Mat y(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
      mean /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) var += (x[i * d + j] - mean) * (x[i * d + j] - mean);
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + static_cast<double>(config.layer_norm_eps));
      for (std::size_t j = 0; j < d; ++j) y[i * d + j] = (x[i * d + j] - mean) * rstd * g[j] + b[j];
    }
    return y;
  }

  Mat bottleneck(const Mat& h, std::size_t n, const std::string& prefix) const {
    if (!has(prefix + ".down.weight")) return h;
    const std::size_t d = config.d_model, b = at(prefix + ".down.bias").size();
    Mat z = linear(h, n, d, b, prefix + ".down.weight", prefix + ".down.bias");
    for (auto& v : z) v = gelu(v);
    Mat u = linear(z, n, b, d, prefix + ".up.weight", prefix + ".up.bias");
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += h[i];
    return u;
  }

  /// Logits [T, V] for one sequence.
  Mat logits(std::span<const std::int32_t> ids) const {
    const std::size_t T = ids.size(), d = config.d_model, H = config.n_heads, hd = d / H, V = config.vocab_size;
    const std::size_t h4 = config.mlp_ratio * d;
    const auto& tok = at("tok_embeddings.weight");
    const auto& pos = at("pos_embeddings.weight");
    Mat x(T * d);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) x[t * d + j] = tok[ids[t] * d + j] + pos[t * d + j];
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      const std::string p = "blocks." + std::to_string(l);
      Mat qkv = named_linear(layer_norm(x, T, d, p + ".ln_attn"), T, d, 3 * d, p + ".attn.query_key_value");
      Mat o(T * d, 0.0);
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < T; ++i) {
          std::vector<double> s(i + 1);
          double mx = -INFINITY;
          for (std::size_t j = 0; j <= i; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < hd; ++c) dot += qkv[i * 3 * d + h * hd + c] * qkv[j * 3 * d + d + h * hd + c];
            s[j] = dot / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, s[j]);
          }
          double z = 0.0;
          for (auto& v : s) z += (v = std::exp(v - mx));
          for (std::size_t j = 0; j <= i; ++j)
            for (std::size_t c = 0; c < hd; ++c) o[i * d + h * hd + c] += s[j] / z * qkv[j * 3 * d + 2 * d + h * hd + c];
        }
      }
      Mat attn = bottleneck(named_linear(o, T, d, d, p + ".attn.dense"), T, p + ".adapter_attn");
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];
      Mat up = named_linear(layer_norm(x, T, d, p + ".ln_mlp"), T, d, h4, p + ".mlp.dense_h_to_4h");
      for (auto& v : up) v = gelu(v);
      Mat mlp = bottleneck(named_linear(up, T, h4, d, p + ".mlp.dense_4h_to_h"), T, p + ".adapter_mlp");
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];
    }
    x = layer_norm(x, T, d, "ln_f");
    return linear(x, T, d, V, "tok_embeddings.weight", "");
  }

  /// Mean over all batches of -log p(labels[t+1] | ids[..t]) with -1 skipped.
  double loss(std::span<const std::int32_t> ids, std::span<const std::int32_t> labels, std::size_t batch) const {
    const std::size_t T = ids.size() / batch, V = config.vocab_size;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const Mat lg = logits(ids.subspan(b * T, T));
      for (std::size_t t = 0; t + 1 < T; ++t) {
        const std::int32_t y = labels[b * T + t + 1];
        if (y < 0) continue;
        double mx = -INFINITY;
        for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, lg[t * V + v]);
        double z = 0.0;
        for (std::size_t v = 0; v < V; ++v) z += std::exp(lg[t * V + v] - mx);
        total += std::log(z) + mx - lg[t * V + y];
        ++count;
      }
    }
    return total / static_cast<double>(count);
  }
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "name[index]"
};

/// Autodiff gradients of lm_loss versus central differences of RefModel::loss
/// over every trainable entry. Relative error uses max(|a|, |n|, floor).
inline GradcheckResult gradcheck(CausalLM& model, std::span<const std::int32_t> ids,
                                 std::span<const std::int32_t> labels, std::size_t batch, double h, double floor) {
  for (Parameter* p : model.parameters())
    if (p->var.has_grad()) p->var.clear_grad();
  ForwardContext ctx;
  backward(lm_loss(model, ids, labels, batch, ids.size() / batch, ctx));
  RefModel ref = RefModel::from(model);
  GradcheckResult out;
  for (Parameter* p : model.parameters()) {
    if (!p->trainable) continue;
    auto& v = ref.params.at(p->name);
    const auto g = p->var.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = ref.loss(ids, labels, batch);
      v[i] = saved - h;
      const double down = ref.loss(ids, labels, batch);
      v[i] = saved;
      const double num = (up - down) / (2.0 * h);
      const double ana = g.empty() ? 0.0 : g[i];
      const double err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = p->name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

/// Fills every parameter with N(0, std^2) so no gradient vanishes by symmetry.
inline void randomize(CausalLM& model, Rng& rng, float std) {
  for (Parameter* p : model.parameters()) p->mutable_value() = gaussian_sample(rng, 0.0f, std, p->value().shape());
}

}  // namespace pft::test

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-free reverse-mode autodiff. Every op returns a Var whose node keeps
// its inputs alive and a closure that pushes the node's gradient back to
// them. backward() walks the reachable graph in reverse topological order.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pft/tensor.hpp"

namespace pft {

class Rng;

struct Node {
  Tensor value;
  std::vector<float> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Gradient buffer of this node, zero-allocated on first use.
  std::span<float> grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad; }
  /// Drops the gradient buffer entirely.
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Populates gradients of every requires_grad node reachable from a scalar loss.
void backward(const Var& loss);

bool grad_enabled() noexcept;

/// Disables graph construction for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The backward closure is attached only when grad mode
/// is on and some input requires a gradient. Throws numeric error on a
/// non-finite value.
Var make_op_result(const char* op, Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backward_fn);

namespace ops {

/// Sentinel target id that contributes nothing to the loss.
inline constexpr std::int32_t kIgnoreIndex = -1;

Var add(const Var& a, const Var& b);  // b same shape as a or a trailing suffix of it
Var mul(const Var& a, const Var& b);  // same shape
Var scale(const Var& a, float factor);
Var sum(const Var& a);

/// a [..., M, K] x b [K, N] or batched a [B, M, K] x b [B, K, N].
Var matmul(const Var& a, const Var& b);
/// x [..., in] W^T + bias, W [out, in]; bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var transpose(const Var& a, std::size_t dim0, std::size_t dim1);
Var reshape(const Var& a, Shape shape);
/// Columns [start, start+len) of the last dimension.
Var slice_last(const Var& a, std::size_t start, std::size_t len);

Var softmax(const Var& a);  // over the last dimension
/// For scores [..., T, T], replaces entries above the diagonal by a large negative value.
Var causal_mask(const Var& scores);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps);
Var gelu(const Var& x);  // exact erf form
/// Rows of table [V, D] for ids laid out as `out_shape` (ids.size() == numel(out_shape)).
Var embedding(const Var& table, std::span<const std::int32_t> ids, const Shape& out_shape);
/// Mean negative log-likelihood over non-ignored rows of logits [N, V].
Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets);
/// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, float p, Rng& rng);

}  // namespace ops

namespace kernels {

/// y[n, o] = sum_k x[n, k] * w[o, k], summed in increasing k.
void linear_forward(std::span<const float> x, std::span<const float> w, std::span<float> y,
                    std::size_t rows, std::size_t in, std::size_t out);

}  // namespace kernels

}  // namespace pft

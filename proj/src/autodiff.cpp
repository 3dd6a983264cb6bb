// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "pft/error.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

thread_local bool g_grad_enabled = true;

// Large negative score for masked attention positions; exp() of it underflows to 0.
constexpr float kMaskedScore = -1.0e30f;

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorKind::dimension,
       std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool wants(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

}  // namespace

std::span<float> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op_result(const char* op, Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backward_fn) {
  if (auto bad = value.first_non_finite()) {
    fail(ErrorKind::numeric,
         std::string(op) + ": non-finite output at flat index " + std::to_string(*bad));
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorKind::contract, "backward: loss must be a scalar, got shape " +
                                  (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    fail(ErrorKind::contract, "backward: loss does not depend on any trainable parameter");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Release the graph; leaves keep their gradients.
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

namespace kernels {

void linear_forward(std::span<const float> x, std::span<const float> w, std::span<float> y,
                    std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t n = 0; n < rows; ++n) {
    const float* xr = x.data() + n * in;
    float* yr = y.data() + n * out;
    for (std::size_t o = 0; o < out; ++o) {
      const float* wr = w.data() + o * in;
      float acc = 0.0f;
      for (std::size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
      yr[o] = acc;
    }
  }
}

}  // namespace kernels

namespace ops {

Var add(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  if (!same) {
    if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
      shape_error("add", sa, sb);
    }
  }
  const std::size_t inner = b.size();
  Tensor y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bd[i % inner];
  return make_op_result("add", std::move(y), {a, b}, [inner](Node& self) {
    const auto& g = self.grad;
    if (wants(self.inputs[0])) {
      auto ga = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (wants(self.inputs[1])) {
      auto gb = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  Tensor y = a.value();
  auto yd = y.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] *= bd[i];
  return make_op_result("mul", std::move(y), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (wants(self.inputs[0])) {
      auto ga = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (wants(self.inputs[1])) {
      auto gb = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& a, float factor) {
  Tensor y = a.value();
  for (auto& v : y.data()) v *= factor;
  return make_op_result("scale", std::move(y), {a}, [factor](Node& self) {
    auto ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * factor;
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (float v : a.value().data()) acc += v;
  return make_op_result("sum", Tensor::scalar(static_cast<float>(acc)), {a}, [](Node& self) {
    auto ga = self.inputs[0]->grad_buffer();
    const float g = self.grad[0];
    for (auto& v : ga) v += g;
  });
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || (sb.size() != 2 && sb.size() != 3)) shape_error("matmul", sa, sb);
  const bool batched = sb.size() == 3;
  std::size_t batch = 1, M, K = sa.back(), N = sb.back();
  if (batched) {
    if (sa.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1]) shape_error("matmul", sa, sb);
    batch = sa[0];
    M = sa[1];
  } else {
    if (sb[0] != K) shape_error("matmul", sa, sb);
    M = a.size() / K;
  }
  Shape out_shape = sa;
  out_shape.back() = N;
  Tensor y(out_shape);
  const float* ad = a.value().ptr();
  const float* bd = b.value().ptr();
  float* yd = y.ptr();
  for (std::size_t p = 0; p < batch; ++p) {
    const float* ap = ad + p * M * K;
    const float* bp = bd + (batched ? p * K * N : 0);
    float* yp = yd + p * M * N;
    for (std::size_t i = 0; i < M; ++i) {
      float* yr = yp + i * N;
      for (std::size_t k = 0; k < K; ++k) {
        const float aik = ap[i * K + k];
        const float* br = bp + k * N;
        for (std::size_t j = 0; j < N; ++j) yr[j] += aik * br[j];
      }
    }
  }
  return make_op_result("matmul", std::move(y), {a, b}, [batch, M, K, N, batched](Node& self) {
    const float* g = self.grad.data();
    const float* ad = self.inputs[0]->value.ptr();
    const float* bd = self.inputs[1]->value.ptr();
    const bool want_a = wants(self.inputs[0]);
    const bool want_b = wants(self.inputs[1]);
    float* ga = want_a ? self.inputs[0]->grad_buffer().data() : nullptr;
    float* gb = want_b ? self.inputs[1]->grad_buffer().data() : nullptr;
    for (std::size_t p = 0; p < batch; ++p) {
      const float* gp = g + p * M * N;
      const float* ap = ad + p * M * K;
      const std::size_t boff = batched ? p * K * N : 0;
      for (std::size_t i = 0; i < M; ++i) {
        const float* gr = gp + i * N;
        for (std::size_t k = 0; k < K; ++k) {
          const float* br = bd + boff + k * N;
          if (want_a) {
            float acc = 0.0f;
            for (std::size_t j = 0; j < N; ++j) acc += gr[j] * br[j];
            ga[p * M * K + i * K + k] += acc;
          }
          if (want_b) {
            const float aik = ap[i * K + k];
            float* gbr = gb + boff + k * N;
            for (std::size_t j = 0; j < N; ++j) gbr[j] += aik * gr[j];
          }
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || sw[1] != sx.back()) shape_error("linear", sx, sw);
  const std::size_t in = sw[1], out = sw[0], rows = x.size() / in;
  if (bias.defined() && bias.shape() != Shape{out}) shape_error("linear(bias)", sw, bias.shape());
  Shape out_shape = sx;
  out_shape.back() = out;
  Tensor y(out_shape);
  kernels::linear_forward(x.value().data(), weight.value().data(), y.data(), rows, in, out);
  if (bias.defined()) {
    const float* bd = bias.value().ptr();
    float* yd = y.ptr();
    for (std::size_t n = 0; n < rows; ++n)
      for (std::size_t o = 0; o < out; ++o) yd[n * out + o] += bd[o];
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result("linear", std::move(y), std::move(inputs), [rows, in, out](Node& self) {
    const float* g = self.grad.data();
    const float* xd = self.inputs[0]->value.ptr();
    const float* wd = self.inputs[1]->value.ptr();
    if (wants(self.inputs[0])) {
      float* gx = self.inputs[0]->grad_buffer().data();
      for (std::size_t n = 0; n < rows; ++n) {
        float* gxr = gx + n * in;
        for (std::size_t o = 0; o < out; ++o) {
          const float go = g[n * out + o];
          const float* wr = wd + o * in;
          for (std::size_t k = 0; k < in; ++k) gxr[k] += go * wr[k];
        }
      }
    }
    if (wants(self.inputs[1])) {
      float* gw = self.inputs[1]->grad_buffer().data();
      for (std::size_t n = 0; n < rows; ++n) {
        const float* xr = xd + n * in;
        for (std::size_t o = 0; o < out; ++o) {
          const float go = g[n * out + o];
          float* gwr = gw + o * in;
          for (std::size_t k = 0; k < in; ++k) gwr[k] += go * xr[k];
        }
      }
    }
    if (self.inputs.size() > 2 && wants(self.inputs[2])) {
      float* gb = self.inputs[2]->grad_buffer().data();
      for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t o = 0; o < out; ++o) gb[o] += g[n * out + o];
    }
  });
}

namespace {

// Copies `src` (shape `s`) into `dst` with dims d0 and d1 swapped. When
// `accumulate` is set the values are added instead.
void swap_axes(const float* src, float* dst, const Shape& s, std::size_t d0, std::size_t d1,
               bool accumulate) {
  const std::size_t r = s.size();
  Shape out = s;
  std::swap(out[d0], out[d1]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  std::vector<std::size_t> stride_for_out(in_stride);
  std::swap(stride_for_out[d0], stride_for_out[d1]);
  std::vector<std::size_t> idx(r, 0);
  const std::size_t total = numel(s);
  std::size_t offset = 0;
  for (std::size_t n = 0; n < total; ++n) {
    if (accumulate) {
      dst[n] += src[offset];
    } else {
      dst[n] = src[offset];
    }
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < out[k]) {
        offset += stride_for_out[k];
        break;
      }
      offset -= (out[k] - 1) * stride_for_out[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

Var transpose(const Var& a, std::size_t dim0, std::size_t dim1) {
  const Shape& s = a.shape();
  if (dim0 >= s.size() || dim1 >= s.size()) {
    fail(ErrorKind::dimension, "transpose: dims " + std::to_string(dim0) + "," +
                                   std::to_string(dim1) + " out of range for " + shape_str(s));
  }
  Shape out = s;
  std::swap(out[dim0], out[dim1]);
  Tensor y(out);
  if (dim0 == dim1) {
    y = a.value();
  } else {
    swap_axes(a.value().ptr(), y.ptr(), s, dim0, dim1, false);
  }
  return make_op_result("transpose", std::move(y), {a}, [out, dim0, dim1](Node& self) {
    auto ga = self.inputs[0]->grad_buffer();
    if (dim0 == dim1) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    } else {
      swap_axes(self.grad.data(), ga.data(), out, dim0, dim1, true);
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_op_result("reshape", std::move(y), {a}, [](Node& self) {
    auto ga = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Var slice_last(const Var& a, std::size_t start, std::size_t len) {
  const Shape& s = a.shape();
  const std::size_t width = last_dim(s);
  if (s.empty() || start + len > width) {
    fail(ErrorKind::dimension, "slice_last: [" + std::to_string(start) + ", " +
                                   std::to_string(start + len) + ") outside " + shape_str(s));
  }
  const std::size_t rows = a.size() / width;
  Shape out = s;
  out.back() = len;
  Tensor y(out);
  const float* ad = a.value().ptr();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(ad + r * width + start, len, y.ptr() + r * len);
  return make_op_result("slice_last", std::move(y), {a}, [rows, width, start, len](Node& self) {
    float* ga = self.inputs[0]->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) ga[r * width + start + j] += self.grad[r * len + j];
  });
}

Var softmax(const Var& a) {
  const std::size_t width = last_dim(a.shape());
  const std::size_t rows = a.size() / width;
  Tensor y = a.value();
  float* yd = y.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = yd + r * width;
    const float mx = *std::max_element(row, row + width);
    float total = 0.0f;
    for (std::size_t j = 0; j < width; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < width; ++j) row[j] /= total;
  }
  return make_op_result("softmax", std::move(y), {a}, [rows, width](Node& self) {
    const float* yv = self.value.ptr();
    const float* g = self.grad.data();
    float* ga = self.inputs[0]->grad_buffer().data();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* yr = yv + r * width;
      const float* gr = g + r * width;
      float dot = 0.0f;
      for (std::size_t j = 0; j < width; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var causal_mask(const Var& scores) {
  const Shape& s = scores.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) {
    fail(ErrorKind::dimension, "causal_mask: expected [..., T, T], got " + shape_str(s));
  }
  const std::size_t T = s.back();
  const std::size_t mats = scores.size() / (T * T);
  Tensor y = scores.value();
  float* yd = y.ptr();
  for (std::size_t m = 0; m < mats; ++m)
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = i + 1; j < T; ++j) yd[m * T * T + i * T + j] = kMaskedScore;
  return make_op_result("causal_mask", std::move(y), {scores}, [mats, T](Node& self) {
    float* ga = self.inputs[0]->grad_buffer().data();
    for (std::size_t m = 0; m < mats; ++m)
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j <= i; ++j) ga[m * T * T + i * T + j] += self.grad[m * T * T + i * T + j];
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps) {
  if (!(eps > 0.0f)) fail(ErrorKind::contract, "layer_norm: epsilon must be > 0");
  const std::size_t width = last_dim(x.shape());
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    shape_error("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t rows = x.size() / width;
  Tensor y(x.shape());
  std::vector<float> xhat(x.size());
  std::vector<float> rstd(rows);
  const float* xd = x.value().ptr();
  const float* gd = gain.value().ptr();
  const float* bd = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd + r * width;
    float mean = 0.0f;
    for (std::size_t j = 0; j < width; ++j) mean += xr[j];
    mean /= static_cast<float>(width);
    float var = 0.0f;
    for (std::size_t j = 0; j < width; ++j) {
      const float d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<float>(width);
    rstd[r] = 1.0f / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) {
      const float h = (xr[j] - mean) * rstd[r];
      xhat[r * width + j] = h;
      y[r * width + j] = h * gd[j] + bd[j];
    }
  }
  return make_op_result(
      "layer_norm", std::move(y), {x, gain, bias},
      [rows, width, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const float* g = self.grad.data();
        const float* gd = self.inputs[1]->value.ptr();
        if (wants(self.inputs[0])) {
          float* gx = self.inputs[0]->grad_buffer().data();
          std::vector<float> gh(width);
          for (std::size_t r = 0; r < rows; ++r) {
            float mean_gh = 0.0f, mean_ghx = 0.0f;
            for (std::size_t j = 0; j < width; ++j) {
              gh[j] = g[r * width + j] * gd[j];
              mean_gh += gh[j];
              mean_ghx += gh[j] * xhat[r * width + j];
            }
            mean_gh /= static_cast<float>(width);
            mean_ghx /= static_cast<float>(width);
            for (std::size_t j = 0; j < width; ++j) {
              gx[r * width + j] += rstd[r] * (gh[j] - mean_gh - xhat[r * width + j] * mean_ghx);
            }
          }
        }
        if (wants(self.inputs[1])) {
          float* gg = self.inputs[1]->grad_buffer().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < width; ++j) gg[j] += g[r * width + j] * xhat[r * width + j];
        }
        if (wants(self.inputs[2])) {
          float* gb = self.inputs[2]->grad_buffer().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < width; ++j) gb[j] += g[r * width + j];
        }
      });
}

Var gelu(const Var& x) {
  Tensor y = x.value();
  for (auto& v : y.data()) v = 0.5f * v * (1.0f + std::erf(v * static_cast<float>(std::numbers::sqrt2 / 2)));
  return make_op_result("gelu", std::move(y), {x}, [](Node& self) {
    const auto& xv = self.inputs[0]->value;
    auto gx = self.inputs[0]->grad_buffer();
    const float inv_sqrt2 = static_cast<float>(std::numbers::sqrt2 / 2);
    const float inv_sqrt2pi = static_cast<float>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const float v = xv[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
      const float pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
      gx[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids, const Shape& out_shape) {
  const Shape& st = table.shape();
  if (st.size() != 2) fail(ErrorKind::dimension, "embedding: table must be 2-D, got " + shape_str(st));
  if (numel(out_shape) != ids.size()) {
    fail(ErrorKind::dimension, "embedding: " + std::to_string(ids.size()) + " ids for shape " +
                                   shape_str(out_shape));
  }
  const std::size_t V = st[0], D = st[1];
  Shape shape = out_shape;
  shape.push_back(D);
  Tensor y(shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= V) {
      fail(ErrorKind::input, "embedding: id " + std::to_string(ids[i]) + " at position " +
                                 std::to_string(i) + " outside vocabulary of " + std::to_string(V));
    }
    std::copy_n(table.value().ptr() + static_cast<std::size_t>(ids[i]) * D, D, y.ptr() + i * D);
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return make_op_result("embedding", std::move(y), {table}, [D, saved = std::move(saved)](Node& self) {
    float* gt = self.inputs[0]->grad_buffer().data();
    for (std::size_t i = 0; i < saved.size(); ++i) {
      float* row = gt + static_cast<std::size_t>(saved[i]) * D;
      for (std::size_t j = 0; j < D; ++j) row[j] += self.grad[i * D + j];
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != targets.size()) {
    fail(ErrorKind::dimension, "cross_entropy: logits " + shape_str(s) + " vs " +
                                   std::to_string(targets.size()) + " targets");
  }
  const std::size_t N = s[0], V = s[1];
  const float* ld = logits.value().ptr();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const std::int32_t t = targets[n];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      fail(ErrorKind::input, "cross_entropy: target " + std::to_string(t) + " at row " +
                                 std::to_string(n) + " outside vocabulary of " + std::to_string(V));
    }
    const float* row = ld + n * V;
    const double mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(z) - row[t];
    ++count;
  }
  if (count == 0) fail(ErrorKind::contract, "cross_entropy: every target position is masked");
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return make_op_result(
      "cross_entropy", Tensor::scalar(static_cast<float>(total / static_cast<double>(count))), {logits},
      [N, V, count, saved = std::move(saved)](Node& self) {
        const float g = self.grad[0] / static_cast<float>(count);
        const float* ld = self.inputs[0]->value.ptr();
        float* gl = self.inputs[0]->grad_buffer().data();
        for (std::size_t n = 0; n < N; ++n) {
          if (saved[n] == kIgnoreIndex) continue;
          const float* row = ld + n * V;
          const double mx = *std::max_element(row, row + V);
          double z = 0.0;
          for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
          for (std::size_t j = 0; j < V; ++j) {
            const double p = std::exp(static_cast<double>(row[j]) - mx) / z;
            gl[n * V + j] += g * static_cast<float>(p - (static_cast<std::int32_t>(j) == saved[n] ? 1.0 : 0.0));
          }
        }
      });
}

Var dropout(const Var& x, float p, Rng& rng) {
  if (!(p >= 0.0f && p < 1.0f)) fail(ErrorKind::contract, "dropout: p must be in [0, 1)");
  if (p == 0.0f) return x;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> mask(x.size());
  for (auto& m : mask) m = rng.uniform() >= static_cast<double>(p) ? keep_scale : 0.0f;
  Tensor y = x.value();
  for (std::size_t i = 0; i < mask.size(); ++i) y[i] *= mask[i];
  return make_op_result("dropout", std::move(y), {x}, [mask = std::move(mask)](Node& self) {
    auto gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

}  // namespace ops
}  // namespace pft

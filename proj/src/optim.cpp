// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pft/error.hpp"

namespace pft {
namespace {

std::size_t round_up(std::size_t n, std::size_t align) { return (n + align - 1) / align * align; }

std::FILE* open_scratch(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w+b");
  if (!f) fail(ErrorKind::io, "paged optimizer: cannot open scratch file " + path.string());
  return f;
}

}  // namespace

PageTable::PageTable(std::filesystem::path scratch, std::size_t budget,
                     std::vector<std::size_t> page_elems)
    : scratch_(std::move(scratch)), budget_(budget), elems_(std::move(page_elems)) {
  if (budget_ < 1) fail(ErrorKind::config, "paged optimizer: budget must be >= 1 page");
  offsets_.resize(elems_.size());
  std::uint64_t off = 0;
  for (std::size_t i = 0; i < elems_.size(); ++i) {
    offsets_[i] = off;
    off += page_bytes(i);
  }
  resident_.assign(elems_.size(), false);
  file_ = open_scratch(scratch_);
}

PageTable::~PageTable() {
  if (file_) std::fclose(file_);
  std::error_code ec;
  std::filesystem::remove(scratch_, ec);
}

std::size_t PageTable::page_bytes(std::size_t i) const {
  return round_up(2 * elems_[i] * sizeof(float), kPageAlign);
}

std::size_t PageTable::resident_count() const {
  return static_cast<std::size_t>(std::count(resident_.begin(), resident_.end(), true));
}

void PageTable::evict(std::size_t i, std::vector<Moments>& store) {
  std::FILE* f = file_;
  const std::size_t n = elems_[i];
  if (std::fseek(f, static_cast<long>(offsets_[i]), SEEK_SET) != 0 ||
      std::fwrite(store[i].m.data(), sizeof(float), n, f) != n ||
      std::fwrite(store[i].v.data(), sizeof(float), n, f) != n) {
    fail(ErrorKind::io, "paged optimizer: write to scratch file " + scratch_.string() + " failed");
  }
  store[i].m = {};
  store[i].v = {};
  resident_[i] = false;
  lru_.remove(i);
  ++evictions_;
}

void PageTable::fault_in(std::size_t i, std::vector<Moments>& store) {
  std::FILE* f = file_;
  const std::size_t n = elems_[i];
  store[i].m.assign(n, 0.0f);
  store[i].v.assign(n, 0.0f);
  std::fflush(f);
  if (std::fseek(f, static_cast<long>(offsets_[i]), SEEK_SET) != 0 ||
      std::fread(store[i].m.data(), sizeof(float), n, f) != n ||
      std::fread(store[i].v.data(), sizeof(float), n, f) != n) {
    fail(ErrorKind::io, "paged optimizer: read from scratch file " + scratch_.string() + " failed");
  }
  resident_[i] = true;
  ++faults_;
}

void PageTable::touch(std::size_t i, std::vector<Moments>& store) {
  if (!resident_[i]) fault_in(i, store);
  lru_.remove(i);
  lru_.push_front(i);
  while (lru_.size() > budget_) evict(lru_.back(), store);
}

void PageTable::adopt(std::size_t i, std::vector<Moments>& store) {
  resident_[i] = true;
  touch(i, store);
}

void PageTable::fault_in_all(std::vector<Moments>& store) {
  for (std::size_t i = 0; i < elems_.size(); ++i) {
    if (!resident_[i]) {
      fault_in(i, store);
      lru_.push_back(i);
    }
  }
}

OptimizerState::OptimizerState(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    names_.push_back(p->name);
    Moments mo;
    mo.m.assign(p->value().size(), 0.0f);
    mo.v.assign(p->value().size(), 0.0f);
    moments_.push_back(std::move(mo));
  }
}

void OptimizerState::enable_paging(const std::filesystem::path& scratch, std::size_t budget) {
  std::vector<std::size_t> elems;
  for (const auto& mo : moments_) elems.push_back(mo.m.size());
  auto table = std::make_unique<PageTable>(scratch, budget, std::move(elems));
  for (std::size_t i = 0; i < moments_.size(); ++i) table->adopt(i, moments_);
  paging_ = std::move(table);
}

Moments& OptimizerState::moments(std::size_t i) {
  if (paging_) paging_->touch(i, moments_);
  return moments_[i];
}

std::vector<Moments> OptimizerState::snapshot() {
  if (!paging_) return moments_;
  std::vector<Moments> out(moments_.size());
  for (std::size_t i = 0; i < moments_.size(); ++i) out[i] = moments(i);
  return out;
}

void OptimizerState::restore(std::vector<Moments> moments) {
  if (moments.size() != moments_.size()) {
    fail(ErrorKind::format, "optimizer state: expected " + std::to_string(moments_.size()) +
                                " moment pairs, got " + std::to_string(moments.size()));
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].m.size() != moments[i].v.size() ||
        (!paging_ && moments[i].m.size() != moments_[i].m.size())) {
      fail(ErrorKind::format, "optimizer state: moment size mismatch for " + names_[i]);
    }
  }
  if (!paging_) {
    moments_ = std::move(moments);
    return;
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    Moments& slot = this->moments(i);
    slot = std::move(moments[i]);
  }
}

void adamw_step(std::span<Parameter* const> params, OptimizerState& state, const AdamWHyper& hp) {
  if (!(hp.lr >= 0.0f)) fail(ErrorKind::contract, "adamw: learning rate must be >= 0");
  const std::int64_t t = state.step_count_ + 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(hp.beta1), static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(hp.beta2), static_cast<double>(t));
  const float step_size = static_cast<float>(static_cast<double>(hp.lr) / bc1);
  const float bc2_sqrt = static_cast<float>(std::sqrt(bc2));

  std::size_t slot = 0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (slot >= state.names_.size() || state.names_[slot] != p->name) {
      fail(ErrorKind::contract, "adamw: parameter " + p->name + " not registered with optimizer");
    }
    if (!p->var.has_grad()) fail(ErrorKind::contract, "adamw: missing gradient for " + p->name);
    Moments& mo = state.moments(slot);
    auto w = p->mutable_value().data();
    auto g = p->var.grad();
    if (hp.weight_decay > 0.0f) {
      const float decay = 1.0f - hp.lr * hp.weight_decay;
      for (auto& x : w) x *= decay;
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      mo.m[i] = hp.beta1 * mo.m[i] + (1.0f - hp.beta1) * g[i];
      mo.v[i] = hp.beta2 * mo.v[i] + (1.0f - hp.beta2) * g[i] * g[i];
      const float denom = std::sqrt(mo.v[i]) / bc2_sqrt + hp.eps;
      w[i] -= step_size * (mo.m[i] / denom);
    }
    ++slot;
  }
  if (slot != state.names_.size()) {
    fail(ErrorKind::contract, "adamw: optimizer expects " + std::to_string(state.names_.size()) +
                                  " trainable parameters, got " + std::to_string(slot));
  }
  state.step_count_ = t;
}

double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (!p->var.has_grad()) continue;
    for (float g : p->var.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

float clip_global_norm(std::span<Parameter* const> params, float max_norm) {
  if (!(max_norm > 0.0f)) fail(ErrorKind::contract, "clip_global_norm: max_norm must be > 0");
  const double norm = global_grad_norm(params);
  const double coef = static_cast<double>(max_norm) / (norm + 1e-6);
  if (coef >= 1.0) return 1.0f;
  const float factor = static_cast<float>(coef);
  for (Parameter* p : params) {
    if (!p->var.has_grad()) continue;
    for (auto& g : p->var.mutable_grad()) g *= factor;
  }
  return factor;
}

}  // namespace pft

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pft/parameter.hpp"

namespace pft {

struct AdamWHyper {
  float lr = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

struct Moments {
  std::vector<float> m;
  std::vector<float> v;
};

/// LRU residency for optimizer moment pages. One page holds one parameter's
/// (m, v) pair; its on-disk slot is the pair's byte size rounded up to 4 KiB.
class PageTable {
 public:
  static constexpr std::size_t kPageAlign = 4096;

  PageTable(std::filesystem::path scratch, std::size_t budget, std::vector<std::size_t> page_elems);
  ~PageTable();
  PageTable(const PageTable&) = delete;
  PageTable& operator=(const PageTable&) = delete;

  /// Makes page `i` resident (faulting it in from scratch if needed), evicting
  /// least recently used pages beyond the budget into `store`.
  void touch(std::size_t i, std::vector<Moments>& store);
  /// Takes page `i` as resident with its contents already in `store`.
  void adopt(std::size_t i, std::vector<Moments>& store);
  /// Brings every page back into memory (budget temporarily ignored).
  void fault_in_all(std::vector<Moments>& store);

  bool resident(std::size_t i) const { return resident_[i]; }
  std::size_t resident_count() const;
  std::size_t budget() const noexcept { return budget_; }
  std::uint64_t evictions() const noexcept { return evictions_; }
  std::uint64_t faults() const noexcept { return faults_; }
  const std::filesystem::path& scratch_path() const noexcept { return scratch_; }
  std::size_t page_bytes(std::size_t i) const;

 private:
  void evict(std::size_t i, std::vector<Moments>& store);
  void fault_in(std::size_t i, std::vector<Moments>& store);

  std::filesystem::path scratch_;
  std::size_t budget_;
  std::vector<std::size_t> elems_;
  std::vector<std::uint64_t> offsets_;
  std::vector<bool> resident_;
  std::list<std::size_t> lru_;  // front = most recent
  std::uint64_t evictions_ = 0;
  std::uint64_t faults_ = 0;
  std::FILE* file_ = nullptr;
};

/// AdamW state for the trainable parameters, in registration order.
class OptimizerState {
 public:
  OptimizerState() = default;
  explicit OptimizerState(std::span<Parameter* const> params);

  /// Splits moments into pages backed by `scratch`; at most `budget` stay resident.
  void enable_paging(const std::filesystem::path& scratch, std::size_t budget);
  const PageTable* paging() const noexcept { return paging_.get(); }

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::int64_t step_count() const noexcept { return step_count_; }
  void set_step_count(std::int64_t n) noexcept { step_count_ = n; }

  /// Moments for parameter `i`, faulted in when paged.
  Moments& moments(std::size_t i);
  /// Copy of all moments (pages faulted in as needed).
  std::vector<Moments> snapshot();
  void restore(std::vector<Moments> moments);

  friend void adamw_step(std::span<Parameter* const>, OptimizerState&, const AdamWHyper&);

 private:
  std::vector<std::string> names_;
  std::vector<Moments> moments_;
  std::int64_t step_count_ = 0;
  std::unique_ptr<PageTable> paging_;
};

/// One AdamW update with bias correction over the trainable entries of `params`
/// (which must match the state's registration). Gradients are left in place.
void adamw_step(std::span<Parameter* const> params, OptimizerState& state, const AdamWHyper& hp);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// The coefficient is max_norm / (norm + 1e-6), applied only when below 1.
/// Returns the applied factor (1 when nothing was scaled).
float clip_global_norm(std::span<Parameter* const> params, float max_norm);

/// Global L2 norm of all present gradients, accumulated in double in parameter order.
double global_grad_norm(std::span<Parameter* const> params);

}  // namespace pft

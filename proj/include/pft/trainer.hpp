// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pft/corpus.hpp"
#include "pft/model.hpp"
#include "pft/optim.hpp"
#include "pft/rng.hpp"

namespace pft {

enum class OptimKind { adamw_32bit, paged_adamw_32bit };
enum class SchedulerKind { cosine, constant };

struct TrainConfig {
  std::filesystem::path output_dir = "results";
  std::size_t per_device_train_batch_size = 2;
  std::size_t gradient_accumulation_steps = 2;
  OptimKind optim = OptimKind::paged_adamw_32bit;
  std::string save_strategy = "steps";  // steps | no
  std::size_t save_steps = 10;
  std::size_t logging_steps = 10;
  float learning_rate = 2e-4f;
  float max_grad_norm = 0.3f;
  std::size_t max_steps = 60;
  float warmup_ratio = 0.03f;
  SchedulerKind lr_scheduler_type = SchedulerKind::cosine;
  std::uint64_t seed = 42;
  /// When set, overrides max_steps with epochs * ceil(dataset / effective batch).
  std::optional<std::size_t> epochs;
  float weight_decay = 0.0f;
  /// Resident optimizer pages when paged.
  std::size_t page_budget = 1;

  void validate() const;
  std::size_t effective_batch() const noexcept { return per_device_train_batch_size * gradient_accumulation_steps; }
  /// Optimizer steps for a dataset of `n` examples.
  std::size_t total_steps(std::size_t n) const;
};

std::string_view to_string(OptimKind k) noexcept;
std::string_view to_string(SchedulerKind k) noexcept;
OptimKind optim_from_string(std::string_view s);
SchedulerKind scheduler_from_string(std::string_view s);

/// Warmup w = ceil(warmup_ratio * total); lr * (s+1)/w during warmup, then
/// cosine decay to zero at s = total (or constant).
float lr_at_step(const TrainConfig& config, std::size_t total_steps, std::size_t s);
inline float lr_at_step(const TrainConfig& config, std::size_t s) { return lr_at_step(config, config.max_steps, s); }
std::size_t warmup_steps(const TrainConfig& config, std::size_t total_steps);

struct DataCursor {
  std::uint64_t epoch = 0;
  std::size_t offset = 0;
  std::vector<std::uint32_t> order;
  bool operator==(const DataCursor&) const = default;
};

struct TrainerState {
  std::int64_t global_step = 0;
  RngState rng;
  DataCursor cursor;
  double window_loss_sum = 0.0;
  std::size_t window_steps = 0;
  double total_loss_sum = 0.0;
  std::size_t total_steps_done = 0;
  bool operator==(const TrainerState&) const = default;
};

struct MetricsRecord {
  std::int64_t step = 0;
  float training_loss = 0.0f;
  float learning_rate = 0.0f;
  std::int64_t wall_ms = 0;
  double epoch = 0.0;
};

std::string metrics_json(const MetricsRecord& r);

/// Draws the next micro-batch, reshuffling at each epoch boundary.
std::vector<std::uint32_t> next_batch(DataCursor& cursor, Rng& rng, std::size_t dataset_size, std::size_t batch);

/// One optimizer step: K micro-batches of B examples, each example's loss
/// scaled by 1/(B*K), clip, AdamW at lr_at_step, zero grads. Returns the
/// mean example loss of the step.
double train_step(CausalLM& model, const std::vector<TrainingExample>& data, TrainerState& state,
                  OptimizerState& optimizer, const TrainConfig& config, std::size_t total_steps);

struct TrainResult {
  TrainerState state;
  std::vector<MetricsRecord> records;
  double mean_loss = 0.0;  // over every step of the run, resumed steps included
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::string> warnings;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  bool write_files = true;  // metrics.jsonl and checkpoints
  /// Called after each optimizer step (tests use it to stop early).
  std::function<bool(const TrainerState&)> stop_after;
};

/// Full loop. Trains every trainable parameter of `model`; frozen parameters
/// are checked byte-for-byte against a snapshot at the end.
TrainResult train_loop(CausalLM& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                       const TrainOptions& options = {});

void save_checkpoint(const std::filesystem::path& dir, const CausalLM& model, OptimizerState& optimizer,
                     const TrainerState& state);
/// Restores model tensors and optimizer moments in place; returns the trainer state.
TrainerState load_checkpoint(const std::filesystem::path& dir, CausalLM& model, OptimizerState& optimizer);

/// Hyperparameter search over a JSON-valued space (key -> list of values).
using SearchSpace = std::map<std::string, std::vector<double>>;

struct Trial {
  std::size_t index = 0;
  std::map<std::string, double> params;
  double objective = 0.0;
};

enum class SearchStrategy { grid, random };

/// Grid: cartesian product in sorted key order. Random: `budget` draws, each
/// key sampled uniformly from its list with the seeded Rng.
std::vector<std::map<std::string, double>> enumerate_trials(const SearchSpace& space, SearchStrategy strategy,
                                                            std::size_t budget, std::uint64_t seed);

/// Evaluates each trial with `objective` and sorts ascending (stable on index).
std::vector<Trial> hyperparameter_search(const SearchSpace& space, SearchStrategy strategy, std::size_t budget,
                                         std::uint64_t seed,
                                         const std::function<double(const std::map<std::string, double>&)>& objective);

}  // namespace pft

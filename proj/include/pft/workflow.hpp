// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command implementations behind the C API. Every command reads one flat
// RunConfig whose keys reuse the training-argument vocabulary.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pft/adapters.hpp"
#include "pft/corpus.hpp"
#include "pft/model.hpp"
#include "pft/quant.hpp"
#include "pft/trainer.hpp"

namespace pft {

enum class KeyType { integer, number, boolean, string, string_list };

struct KeyInfo {
  std::string name;
  KeyType type;
  std::string default_json;
  std::string help;
};

const std::vector<KeyInfo>& config_keys();
std::string_view to_string(KeyType t) noexcept;

class RunConfig {
 public:
  RunConfig();
  RunConfig(const RunConfig&);
  RunConfig& operator=(const RunConfig&);
  ~RunConfig();

  /// Overlays a JSON object; unknown keys and ill-typed values are config errors.
  void merge_json(std::string_view json_text);
  void merge_file(const std::filesystem::path& path);
  /// Sets one key from its textual form (lists are comma separated or JSON arrays).
  void set(std::string_view key, std::string_view value);
  bool is_set(std::string_view key) const;

  std::int64_t integer(std::string_view key) const;
  double number(std::string_view key) const;
  bool boolean(std::string_view key) const;
  std::string string(std::string_view key) const;
  std::vector<std::string> strings(std::string_view key) const;
  std::string value_json(std::string_view key) const;

  /// Effective configuration as JSON.
  std::string echo_json() const;

  CausalLMConfig model_config() const;
  TrainConfig train_config() const;
  LoraConfig lora_config() const;
  BottleneckAdapterConfig bottleneck_config() const;
  QuantConfig quant_config() const;
  PreprocessConfig preprocess_config() const;
  GenerationConfig generation_config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CommandResult {
  std::string output;  // text for stdout
  std::vector<std::string> warnings;
};

CommandResult run_tokenizer_train(const RunConfig& cfg);
CommandResult run_prepare_data(const RunConfig& cfg);
CommandResult run_pretrain(const RunConfig& cfg);
CommandResult run_finetune(const RunConfig& cfg);
CommandResult run_merge(const RunConfig& cfg);
CommandResult run_generate(const RunConfig& cfg);
CommandResult run_eval(const RunConfig& cfg);
CommandResult run_compare(const RunConfig& cfg);
CommandResult run_sweep(const RunConfig& cfg);

/// Dispatch by command name.
CommandResult run_command(std::string_view command, const RunConfig& cfg);
const std::vector<std::string>& command_names();

/// Loads `base_model` and, when set, applies `adapter`.
CausalLM load_configured_model(const RunConfig& cfg, bool with_adapter = true);

/// Loads `dataset` (QA CSV) through preprocessing and templating.
std::vector<TrainingExample> configured_examples(const RunConfig& cfg, const Tokenizer& tok, std::string_view key,
                                                 BuildReport* report, std::vector<QAPair>* pairs = nullptr);

}  // namespace pft

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Archive layout, all integers little-endian:
//   "PFWA" | u32 version | u32 entry count
//   entries sorted by name: u32 name_len | name | u8 dtype | u32 ndim |
//                           u64 dims[ndim] | u64 offset | u64 length
//   payload (offsets are relative to the start of the payload)
//   u64 FNV-1a checksum of every preceding byte
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pft/adapters.hpp"
#include "pft/model.hpp"
#include "pft/quant.hpp"

namespace pft {

inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

struct ArchiveEntry {
  DType dtype = DType::f32;
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

class WeightArchive {
 public:
  void put_tensor(const std::string& name, const Tensor& t);
  void put_bytes(const std::string& name, std::span<const std::uint8_t> bytes);
  void put_floats(const std::string& name, std::span<const float> values);
  void put_text(const std::string& name, std::string_view text);

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const ArchiveEntry& entry(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  std::vector<float> floats(const std::string& name) const;
  const std::vector<std::uint8_t>& bytes(const std::string& name) const;
  std::string text(const std::string& name) const;

  const std::map<std::string, ArchiveEntry>& entries() const noexcept { return entries_; }
  void insert(std::string name, ArchiveEntry e);

 private:
  std::map<std::string, ArchiveEntry> entries_;
};

/// Canonical byte image (manifest sorted by name).
std::vector<std::uint8_t> serialize_archive(const WeightArchive& archive);
/// Verifies the checksum before reading any entry.
WeightArchive parse_archive(std::span<const std::uint8_t> bytes);
/// Atomic: writes a temporary sibling, then renames it into place.
void save_archive(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive load_archive(const std::filesystem::path& path);

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Quantized weights under `<prefix>.q.*` with a JSON layout record.
void put_quantized(WeightArchive& archive, const std::string& prefix, const QuantizedTensor& q);
QuantizedTensor get_quantized(const WeightArchive& archive, const std::string& prefix);

std::string model_config_json(const CausalLMConfig& config);
CausalLMConfig model_config_from_json(std::string_view json);

/// Every model tensor plus a self-describing header: adapters, quantized
/// layouts and trainable flags are restored by load_model.
WeightArchive model_to_archive(const CausalLM& model);
CausalLM model_from_archive(const WeightArchive& archive);
void save_model(const CausalLM& model, const std::filesystem::path& path);
CausalLM load_model(const std::filesystem::path& path);

/// Hash of the base config and the canonical bytes of every base tensor.
std::uint64_t base_fingerprint(const CausalLM& model);
std::string fingerprint_hex(std::uint64_t fp);

struct AdapterMeta {
  std::optional<LoraConfig> lora;
  std::optional<BottleneckAdapterConfig> bottleneck;
  std::optional<QuantConfig> quant;  // set when trained over a quantized base
  std::uint64_t base_fingerprint = 0;
};

/// Adapter tensors only; `base_fp` identifies the unquantized base they were trained on.
WeightArchive adapter_to_archive(const CausalLM& model, const AdapterMeta& meta);
void save_adapter(const CausalLM& model, const AdapterMeta& meta, const std::filesystem::path& path);
AdapterMeta read_adapter_meta(const WeightArchive& archive);

/// Checks the fingerprint against `base`, then quantizes (if recorded),
/// attaches and fills the adapters. `base` is untouched on any error.
void apply_adapter(CausalLM& base, const WeightArchive& archive);
void load_adapter(CausalLM& base, const std::filesystem::path& path);

/// Appends one JSON line to a metrics log.
void append_jsonl(const std::filesystem::path& path, std::string_view line);

}  // namespace pft

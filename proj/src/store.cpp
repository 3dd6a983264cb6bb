// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "pft/error.hpp"
#include "pft/hash.hpp"
#include "pft/peft.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

static_assert(std::endian::native == std::endian::little, "archive payloads are written in host order");

using json = nlohmann::json;
constexpr char kMagic[4] = {'P', 'F', 'W', 'A'};
constexpr const char* kMetaEntry = "__meta__";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint64_t uint(std::size_t width, const char* field) {
    need(width, field);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string str(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* field) {
    if (n > b_.size() - pos_) fail(ErrorKind::format, std::string("archive: truncated while reading ") + field);
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 1; }

bool is_adapter_param(const std::string& name) {
  return name.find(".lora_A.") != std::string::npos || name.find(".lora_B.") != std::string::npos ||
         name.find(".adapter_attn.") != std::string::npos || name.find(".adapter_mlp.") != std::string::npos;
}

json quant_json(const QuantConfig& c) {
  return {{"codebook", std::string(to_string(c.codebook))},
          {"block_size", c.block_size},
          {"double_quant", c.double_quant},
          {"dq_group", c.dq_group}};
}

QuantConfig quant_from_json(const json& j) {
  QuantConfig c;
  c.codebook = codebook_from_string(j.at("codebook").get<std::string>());
  c.block_size = j.at("block_size").get<std::size_t>();
  c.double_quant = j.at("double_quant").get<bool>();
  c.dq_group = j.at("dq_group").get<std::size_t>();
  c.validate();
  return c;
}

json lora_json(const LoraConfig& c) {
  return {{"r", c.r},          {"lora_alpha", c.alpha}, {"lora_dropout", c.dropout}, {"target_modules", c.target_modules},
          {"bias", c.bias},    {"task_type", c.task_type}, {"init_std", c.init_std}};
}

LoraConfig lora_from_json(const json& j) {
  LoraConfig c;
  c.r = j.at("r").get<std::size_t>();
  c.alpha = j.at("lora_alpha").get<float>();
  c.dropout = j.at("lora_dropout").get<float>();
  c.target_modules = j.at("target_modules").get<std::vector<std::string>>();
  c.bias = j.at("bias").get<std::string>();
  c.task_type = j.at("task_type").get<std::string>();
  c.init_std = j.at("init_std").get<float>();
  return c;
}

json bottleneck_json(const BottleneckAdapterConfig& c) {
  return {{"bottleneck_dim", c.bottleneck_dim}, {"activation", c.activation}};
}

BottleneckAdapterConfig bottleneck_from_json(const json& j) {
  return {j.at("bottleneck_dim").get<std::size_t>(), j.at("activation").get<std::string>()};
}

json parse_meta(const WeightArchive& a, const char* expected_kind) {
  if (!a.contains(kMetaEntry)) fail(ErrorKind::format, "archive: missing header entry");
  json meta;
  try {
    meta = json::parse(a.text(kMetaEntry));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("archive header: ") + e.what());
  }
  if (meta.value("kind", "") != expected_kind) {
    fail(ErrorKind::format, std::string("archive: expected a ") + expected_kind + " archive, found '" +
                                meta.value("kind", "?") + "'");
  }
  return meta;
}

/// LoRA settings recoverable from attached adapters; alpha = scaling * r.
std::optional<LoraConfig> lora_of(const CausalLM& model) {
  std::optional<LoraConfig> out;
  for (const Linear* l : const_cast<CausalLM&>(model).linears()) {
    if (!l->lora) continue;
    if (!out) {
      out.emplace();
      out->r = l->lora->a.value().dim(0);
      out->alpha = l->lora->scaling * static_cast<float>(out->r);
      out->dropout = l->lora->dropout;
      out->target_modules.clear();
    }
    out->target_modules.push_back(l->name());
  }
  return out;
}

std::optional<BottleneckAdapterConfig> bottleneck_of(const CausalLM& model) {
  for (const Block& b : model.blocks())
    if (b.adapter_attn) return BottleneckAdapterConfig{b.adapter_attn->down_weight.value().dim(0), "gelu"};
  return std::nullopt;
}

std::optional<QuantConfig> quant_of(const CausalLM& model) {
  for (const Linear* l : const_cast<CausalLM&>(model).linears())
    if (l->quantized) return l->quantized->config;
  return std::nullopt;
}

void fill_parameter(Parameter& p, const WeightArchive& a) {
  if (!a.contains(p.name)) fail(ErrorKind::format, "archive: missing tensor " + p.name);
  Tensor t = a.tensor(p.name);
  if (t.shape() != p.value().shape()) {
    fail(ErrorKind::incompatible, "archive: tensor " + p.name + " has shape " + shape_str(t.shape()) +
                                      ", model expects " + shape_str(p.value().shape()));
  }
  p.mutable_value() = std::move(t);
}

}  // namespace

void WeightArchive::insert(std::string name, ArchiveEntry e) {
  if (numel(e.shape) * dtype_size(e.dtype) != e.bytes.size()) {
    fail(ErrorKind::contract, "archive: entry " + name + " byte length disagrees with its shape");
  }
  entries_[std::move(name)] = std::move(e);
}

void WeightArchive::put_tensor(const std::string& name, const Tensor& t) {
  ArchiveEntry e{DType::f32, t.shape(), std::vector<std::uint8_t>(t.size() * 4)};
  if (t.size()) std::memcpy(e.bytes.data(), t.ptr(), e.bytes.size());
  insert(name, std::move(e));
}

void WeightArchive::put_floats(const std::string& name, std::span<const float> values) {
  put_tensor(name, Tensor({values.size()}, std::vector<float>(values.begin(), values.end())));
}

void WeightArchive::put_bytes(const std::string& name, std::span<const std::uint8_t> bytes) {
  insert(name, ArchiveEntry{DType::u8, {bytes.size()}, {bytes.begin(), bytes.end()}});
}

void WeightArchive::put_text(const std::string& name, std::string_view text) {
  put_bytes(name, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

const ArchiveEntry& WeightArchive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorKind::format, "archive: missing entry " + name);
  return it->second;
}

Tensor WeightArchive::tensor(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::f32) fail(ErrorKind::format, "archive: entry " + name + " is not f32");
  std::vector<float> v(e.bytes.size() / 4);
  if (!v.empty()) std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
  return Tensor(e.shape, std::move(v));
}

std::vector<float> WeightArchive::floats(const std::string& name) const {
  auto t = tensor(name);
  return {t.data().begin(), t.data().end()};
}

const std::vector<std::uint8_t>& WeightArchive::bytes(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::u8) fail(ErrorKind::format, "archive: entry " + name + " is not u8");
  return e.bytes;
}

std::string WeightArchive::text(const std::string& name) const {
  const auto& b = bytes(name);
  return {b.begin(), b.end()};
}

std::vector<std::uint8_t> serialize_archive(const WeightArchive& archive) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kArchiveVersion);
  put_u32(out, static_cast<std::uint32_t>(archive.entries().size()));
  std::uint64_t offset = 0;
  for (const auto& [name, e] : archive.entries()) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, d);
    put_u64(out, offset);
    put_u64(out, e.bytes.size());
    offset += e.bytes.size();
  }
  for (const auto& [name, e] : archive.entries()) out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  put_u64(out, fnv1a64(out));
  return out;
}

WeightArchive parse_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20) fail(ErrorKind::format, "archive: file too short (" + std::to_string(bytes.size()) + " bytes)");
  const auto body = bytes.first(bytes.size() - 8);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  if (fnv1a64(body) != stored) fail(ErrorKind::corruption, "archive: checksum mismatch");

  Reader r(body);
  if (r.str(4, "magic") != std::string_view(kMagic, 4)) fail(ErrorKind::format, "archive: bad magic");
  const auto version = r.uint(4, "version");
  if (version != kArchiveVersion) {
    fail(ErrorKind::version, "archive: unsupported format version " + std::to_string(version));
  }
  const auto count = r.uint(4, "entry count");
  struct Slot {
    std::string name;
    ArchiveEntry e;
    std::uint64_t offset, length;
  };
  std::vector<Slot> slots;
  for (std::uint64_t i = 0; i < count; ++i) {
    Slot s;
    s.name = r.str(r.uint(4, "name length"), "name");
    const auto dt = r.uint(1, "dtype");
    if (dt > 1) fail(ErrorKind::format, "archive: unknown dtype for " + s.name);
    s.e.dtype = static_cast<DType>(dt);
    const auto ndim = r.uint(4, "ndim");
    if (ndim > 8) fail(ErrorKind::format, "archive: implausible rank for " + s.name);
    for (std::uint64_t k = 0; k < ndim; ++k) s.e.shape.push_back(r.uint(8, "dims"));
    s.offset = r.uint(8, "offset");
    s.length = r.uint(8, "length");
    if (!slots.empty() && !(slots.back().name < s.name)) fail(ErrorKind::format, "archive: manifest not sorted/unique");
    slots.push_back(std::move(s));
  }
  const std::size_t payload = r.pos();
  const std::uint64_t payload_len = body.size() - payload;
  std::uint64_t expected = 0;
  WeightArchive out;
  for (auto& s : slots) {
    if (s.offset != expected || s.length > payload_len - s.offset) {
      fail(ErrorKind::format, "archive: entry " + s.name + " offset/length out of bounds");
    }
    if (numel(s.e.shape) * dtype_size(s.e.dtype) != s.length) {
      fail(ErrorKind::format, "archive: entry " + s.name + " length disagrees with shape");
    }
    expected += s.length;
    s.e.bytes.assign(body.begin() + static_cast<std::ptrdiff_t>(payload + s.offset),
                     body.begin() + static_cast<std::ptrdiff_t>(payload + s.offset + s.length));
    out.insert(std::move(s.name), std::move(s.e));
  }
  if (expected != payload_len) fail(ErrorKind::format, "archive: trailing payload bytes");
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_archive(const WeightArchive& archive, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_archive(archive));
}

WeightArchive load_archive(const std::filesystem::path& path) { return parse_archive(read_file_bytes(path)); }

void put_quantized(WeightArchive& a, const std::string& prefix, const QuantizedTensor& q) {
  json layout = quant_json(q.config);
  layout["shape"] = q.shape;
  a.put_text(prefix + ".q.layout", layout.dump());
  a.put_bytes(prefix + ".q.packed", q.packed);
  if (q.config.double_quant) {
    a.put_bytes(prefix + ".q.scale_codes", q.scale_codes);
    a.put_floats(prefix + ".q.group_scale", q.group_scale);
    a.put_floats(prefix + ".q.group_offset", q.group_offset);
  } else {
    a.put_floats(prefix + ".q.absmax", q.absmax);
  }
}

QuantizedTensor get_quantized(const WeightArchive& a, const std::string& prefix) {
  QuantizedTensor q;
  try {
    const auto layout = json::parse(a.text(prefix + ".q.layout"));
    q.config = quant_from_json(layout);
    q.shape = layout.at("shape").get<Shape>();
  } catch (const json::exception& e) {
    fail(ErrorKind::format, "archive: layout record for " + prefix + ": " + e.what());
  }
  q.packed = a.bytes(prefix + ".q.packed");
  if (q.config.double_quant) {
    q.scale_codes = a.bytes(prefix + ".q.scale_codes");
    q.group_scale = a.floats(prefix + ".q.group_scale");
    q.group_offset = a.floats(prefix + ".q.group_offset");
  } else {
    q.absmax = a.floats(prefix + ".q.absmax");
  }
  q.validate();
  return q;
}

std::string model_config_json(const CausalLMConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},     {"seq_len", c.seq_len},   {"mlp_ratio", c.mlp_ratio},
              {"layer_norm_eps", c.layer_norm_eps}, {"positional", "learned_absolute"}}
      .dump();
}

CausalLMConfig model_config_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    CausalLMConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.seq_len = j.at("seq_len").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<float>();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("model config: ") + e.what());
  }
}

WeightArchive model_to_archive(const CausalLM& model) {
  WeightArchive a;
  json meta{{"kind", "model"}, {"config", json::parse(model_config_json(model.config()))}};
  json trainable = json::array();
  for (const Parameter* p : model.parameters()) {
    a.put_tensor(p->name, p->value());
    if (p->trainable) trainable.push_back(p->name);
  }
  meta["trainable"] = trainable;
  bool merged = false;
  for (const Linear* l : const_cast<CausalLM&>(model).linears()) {
    if (l->quantized) put_quantized(a, l->name() + ".weight", *l->quantized);
    if (l->lora) merged = l->lora->merged;
  }
  if (auto q = quant_of(model)) meta["quant"] = quant_json(*q);
  if (auto l = lora_of(model)) {
    meta["lora"] = lora_json(*l);
    meta["lora_merged"] = merged;
  }
  if (auto b = bottleneck_of(model)) meta["bottleneck"] = bottleneck_json(*b);
  a.put_text(kMetaEntry, meta.dump());
  return a;
}

CausalLM model_from_archive(const WeightArchive& a) {
  const json meta = parse_meta(a, "model");
  try {
    CausalLM model(model_config_from_json(meta.at("config").dump()));
    for (Linear* l : model.linears()) {
      if (a.contains(l->name() + ".weight.q.layout")) {
        l->quantized = std::make_shared<const QuantizedTensor>(get_quantized(a, l->name() + ".weight"));
        if (l->quantized->shape != Shape{l->out_features(), l->in_features()}) {
          fail(ErrorKind::format, "archive: quantized " + l->name() + " has the wrong shape");
        }
        l->weight = Parameter{};
      }
    }
    Rng scratch(0);
    if (meta.contains("lora")) attach_lora(model, lora_from_json(meta["lora"]), scratch);
    if (meta.contains("bottleneck")) attach_bottleneck(model, bottleneck_from_json(meta["bottleneck"]), scratch);
    const auto trainable = meta.at("trainable").get<std::set<std::string>>();
    for (Parameter* p : model.parameters()) {
      fill_parameter(*p, a);
      p->set_trainable(trainable.count(p->name) > 0);
    }
    if (meta.value("lora_merged", false)) {
      for (Linear* l : model.linears())
        if (l->lora) l->lora->merged = true;
    }
    return model;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("archive header: ") + e.what());
  }
}

void save_model(const CausalLM& model, const std::filesystem::path& path) {
  save_archive(model_to_archive(model), path);
}

CausalLM load_model(const std::filesystem::path& path) { return model_from_archive(load_archive(path)); }

std::uint64_t base_fingerprint(const CausalLM& model) {
  WeightArchive a;
  for (const Parameter* p : model.parameters())
    if (!is_adapter_param(p->name)) a.put_tensor(p->name, p->value());
  for (const Linear* l : const_cast<CausalLM&>(model).linears())
    if (l->quantized) put_quantized(a, l->name() + ".weight", *l->quantized);
  a.put_text(kMetaEntry, model_config_json(model.config()));
  return fnv1a64(serialize_archive(a));
}

std::string fingerprint_hex(std::uint64_t fp) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

WeightArchive adapter_to_archive(const CausalLM& model, const AdapterMeta& meta) {
  if (!meta.lora && !meta.bottleneck) fail(ErrorKind::state, "adapter archive: metadata names no adapter method");
  if (meta.lora.has_value() != has_lora(model) || meta.bottleneck.has_value() != has_bottleneck(model)) {
    fail(ErrorKind::state, "adapter archive: metadata disagrees with the adapters attached to the model");
  }
  WeightArchive a;
  for (const Parameter* p : model.parameters())
    if (is_adapter_param(p->name)) a.put_tensor(p->name, p->value());
  json m{{"kind", "adapter"}, {"base_fingerprint", fingerprint_hex(meta.base_fingerprint)}};
  if (meta.lora) m["lora"] = lora_json(*meta.lora);
  if (meta.bottleneck) m["bottleneck"] = bottleneck_json(*meta.bottleneck);
  if (meta.quant) m["quant"] = quant_json(*meta.quant);
  a.put_text(kMetaEntry, m.dump());
  return a;
}

void save_adapter(const CausalLM& model, const AdapterMeta& meta, const std::filesystem::path& path) {
  save_archive(adapter_to_archive(model, meta), path);
}

AdapterMeta read_adapter_meta(const WeightArchive& a) {
  const json m = parse_meta(a, "adapter");
  AdapterMeta out;
  try {
    if (m.contains("lora")) out.lora = lora_from_json(m["lora"]);
    if (m.contains("bottleneck")) out.bottleneck = bottleneck_from_json(m["bottleneck"]);
    if (m.contains("quant")) out.quant = quant_from_json(m["quant"]);
    out.base_fingerprint = std::stoull(m.at("base_fingerprint").get<std::string>(), nullptr, 16);
  } catch (const std::exception& e) {
    fail(ErrorKind::format, std::string("adapter header: ") + e.what());
  }
  return out;
}

void apply_adapter(CausalLM& base, const WeightArchive& a) {
  const AdapterMeta meta = read_adapter_meta(a);
  const std::uint64_t fp = base_fingerprint(base);
  if (fp != meta.base_fingerprint) {
    fail(ErrorKind::incompatible, "adapter was trained on base " + fingerprint_hex(meta.base_fingerprint) +
                                      " but the provided base is " + fingerprint_hex(fp));
  }
  CausalLM model = base.clone();
  Rng scratch(0);
  if (meta.quant) quantize_base(model, *meta.quant);
  if (meta.lora) attach_lora(model, *meta.lora, scratch);
  if (meta.bottleneck) attach_bottleneck(model, *meta.bottleneck, scratch);
  for (Parameter* p : model.parameters())
    if (is_adapter_param(p->name)) fill_parameter(*p, a);
  base = std::move(model);
}

void load_adapter(CausalLM& base, const std::filesystem::path& path) { apply_adapter(base, load_archive(path)); }

void append_jsonl(const std::filesystem::path& path, std::string_view line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot append to " + path.string());
  out << line << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace pft

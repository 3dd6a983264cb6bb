// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/pft.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "pft/autodiff.hpp"
#include "pft/error.hpp"
#include "pft/peft.hpp"
#include "pft/store.hpp"
#include "pft/workflow.hpp"

struct pft_config {
  pft::RunConfig cfg;
};

struct pft_tokenizer {
  pft::Tokenizer tok;
};

struct pft_model {
  pft::CausalLM model;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_kind;

pft_status set_error(pft::ErrorKind kind, const char* what) {
  g_error = what;
  g_kind = std::string(pft::to_string(kind));
  return static_cast<pft_status>(pft::exit_code_for(kind));
}

/// Runs `f`, translating exceptions into a status and thread-local message.
template <class F>
pft_status guarded(F&& f) noexcept {
  g_error.clear();
  g_kind.clear();
  try {
    f();
    return PFT_OK;
  } catch (const pft::Error& e) {
    return set_error(e.kind(), e.what());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    g_kind = "internal";
    return PFT_ERR_RUNTIME;
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(pft::ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    g_error = e.what();
    g_kind = "internal";
    return PFT_ERR_RUNTIME;
  }
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(const void* p, const char* what) {
  if (!p) pft::fail(pft::ErrorKind::contract, std::string(what) + " is NULL");
}

const pft::KeyInfo* key_at(size_t index) {
  const auto& keys = pft::config_keys();
  return index < keys.size() ? &keys[index] : nullptr;
}

}  // namespace

extern "C" {

const char* pft_version(void) { return "1.0.0"; }
const char* pft_last_error(void) { return g_error.c_str(); }
const char* pft_last_error_kind(void) { return g_kind.c_str(); }

void pft_string_free(char* s) { std::free(s); }
void pft_ids_free(int32_t* ids) { std::free(ids); }

pft_status pft_config_new(pft_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new pft_config();
  });
}

void pft_config_free(pft_config* cfg) { delete cfg; }

pft_status pft_config_clone(const pft_config* cfg, pft_config** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = new pft_config{cfg->cfg};
  });
}

pft_status pft_config_merge_file(pft_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg, "cfg");
    require(path, "path");
    cfg->cfg.merge_file(path);
  });
}

pft_status pft_config_merge_json(pft_config* cfg, const char* json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(json, "json");
    cfg->cfg.merge_json(json);
  });
}

pft_status pft_config_set(pft_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(value, "value");
    cfg->cfg.set(key, value);
  });
}

pft_status pft_config_get_json(const pft_config* cfg, const char* key, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(key, "key");
    require(out_json, "out_json");
    *out_json = dup_string(cfg->cfg.value_json(key));
  });
}

pft_status pft_config_echo_json(const pft_config* cfg, char** out_json) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out_json, "out_json");
    *out_json = dup_string(cfg->cfg.echo_json());
  });
}

size_t pft_config_key_count(void) { return pft::config_keys().size(); }
const char* pft_config_key_name(size_t i) { return key_at(i) ? key_at(i)->name.c_str() : nullptr; }
const char* pft_config_key_type(size_t i) { return key_at(i) ? pft::to_string(key_at(i)->type).data() : nullptr; }
const char* pft_config_key_default(size_t i) { return key_at(i) ? key_at(i)->default_json.c_str() : nullptr; }
const char* pft_config_key_help(size_t i) { return key_at(i) ? key_at(i)->help.c_str() : nullptr; }

size_t pft_command_count(void) { return pft::command_names().size(); }
const char* pft_command_name(size_t i) {
  const auto& names = pft::command_names();
  return i < names.size() ? names[i].c_str() : nullptr;
}

pft_status pft_run(const char* command, const pft_config* cfg, char** out_text, char** out_warnings) {
  if (out_text) *out_text = nullptr;
  if (out_warnings) *out_warnings = nullptr;
  return guarded([&] {
    require(command, "command");
    require(cfg, "cfg");
    const auto r = pft::run_command(command, cfg->cfg);
    std::string warnings;
    for (const auto& w : r.warnings) warnings += w + "\n";
    if (out_text) *out_text = dup_string(r.output);
    if (out_warnings) *out_warnings = dup_string(warnings);
  });
}

pft_status pft_tokenizer_load(const char* path, pft_tokenizer** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new pft_tokenizer{pft::Tokenizer::load(path)};
  });
}

void pft_tokenizer_free(pft_tokenizer* tok) { delete tok; }

size_t pft_tokenizer_vocab_size(const pft_tokenizer* tok) { return tok ? tok->tok.vocab_size() : 0; }

pft_status pft_tokenizer_encode(const pft_tokenizer* tok, const char* text, int32_t** out_ids, size_t* out_len) {
  return guarded([&] {
    require(tok, "tok");
    require(text, "text");
    require(out_ids, "out_ids");
    require(out_len, "out_len");
    const auto ids = tok->tok.encode(text);
    auto* p = static_cast<int32_t*>(std::malloc(std::max<size_t>(ids.size(), 1) * sizeof(int32_t)));
    if (!p) throw std::bad_alloc();
    std::copy(ids.begin(), ids.end(), p);
    *out_ids = p;
    *out_len = ids.size();
  });
}

pft_status pft_tokenizer_decode(const pft_tokenizer* tok, const int32_t* ids, size_t len, char** out_text) {
  return guarded([&] {
    require(tok, "tok");
    require(out_text, "out_text");
    if (len) require(ids, "ids");
    *out_text = dup_string(tok->tok.decode(std::span<const int32_t>(ids, len)));
  });
}

pft_status pft_model_load(const char* path, pft_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new pft_model{pft::load_model(path)};
  });
}

pft_status pft_model_load_configured(const pft_config* cfg, int with_adapter, pft_model** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = new pft_model{pft::load_configured_model(cfg->cfg, with_adapter != 0)};
  });
}

void pft_model_free(pft_model* model) { delete model; }

pft_status pft_model_apply_adapter(pft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    pft::load_adapter(model->model, path);
  });
}

pft_status pft_model_merge(pft_model* model) {
  return guarded([&] {
    require(model, "model");
    pft::merge_lora(model->model);
    pft::dequantize_base(model->model);
  });
}

pft_status pft_model_save(const pft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    pft::save_model(model->model, path);
  });
}

size_t pft_model_vocab_size(const pft_model* model) { return model ? model->model.config().vocab_size : 0; }
size_t pft_model_seq_len(const pft_model* model) { return model ? model->model.config().seq_len : 0; }

pft_status pft_model_param_counts(const pft_model* model, size_t* trainable, size_t* total) {
  return guarded([&] {
    require(model, "model");
    const auto s = pft::trainable_summary(model->model);
    if (trainable) *trainable = s.trainable;
    if (total) *total = s.total;
  });
}

pft_status pft_model_logits(const pft_model* model, const int32_t* ids, size_t len, float* out) {
  return guarded([&] {
    require(model, "model");
    require(ids, "ids");
    require(out, "out");
    if (len == 0 || len > model->model.config().seq_len) {
      pft::fail(pft::ErrorKind::input, "pft_model_logits: length " + std::to_string(len) + " outside [1, " +
                                           std::to_string(model->model.config().seq_len) + "]");
    }
    pft::NoGradGuard no_grad;
    pft::ForwardContext ctx;
    const auto logits = model->model.forward(std::span<const int32_t>(ids, len), 1, len, ctx);
    std::memcpy(out, logits.value().ptr(), len * model->model.config().vocab_size * sizeof(float));
  });
}

}  // extern "C"

/* Copyright 2026 The pft Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface of libpft. Every function that can fail returns a pft_status;
 * on failure pft_last_error() and pft_last_error_kind() describe the error
 * for the calling thread until its next pft call. Strings and id arrays
 * returned through out-parameters are owned by the caller and released with
 * pft_string_free / pft_ids_free.
 */
#ifndef PFT_PFT_H_
#define PFT_PFT_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define PFT_API __declspec(dllexport)
#else
#define PFT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values double as process exit codes. */
typedef enum pft_status {
  PFT_OK = 0,
  PFT_ERR_CONFIG = 1,  /* invalid configuration or usage */
  PFT_ERR_DATA = 2,    /* malformed, missing or incompatible input */
  PFT_ERR_RUNTIME = 3  /* numeric failure, broken invariant, internal error */
} pft_status;

typedef struct pft_config pft_config;
typedef struct pft_tokenizer pft_tokenizer;
typedef struct pft_model pft_model;

PFT_API const char* pft_version(void);
PFT_API const char* pft_last_error(void);
/* "config", "format", "encoding", "io", "input", "data", "version",
 * "corruption", "incompatible", "dimension", "numeric", "contract", "state",
 * "internal", or "" after a successful call. */
PFT_API const char* pft_last_error_kind(void);

PFT_API void pft_string_free(char* s);
PFT_API void pft_ids_free(int32_t* ids);

/* Configuration: one flat key space shared by every command. */
PFT_API pft_status pft_config_new(pft_config** out);
PFT_API void pft_config_free(pft_config* cfg);
PFT_API pft_status pft_config_clone(const pft_config* cfg, pft_config** out);
PFT_API pft_status pft_config_merge_file(pft_config* cfg, const char* path);
PFT_API pft_status pft_config_merge_json(pft_config* cfg, const char* json);
/* Lists accept "a,b,c" or a JSON array. */
PFT_API pft_status pft_config_set(pft_config* cfg, const char* key, const char* value);
PFT_API pft_status pft_config_get_json(const pft_config* cfg, const char* key, char** out_json);
PFT_API pft_status pft_config_echo_json(const pft_config* cfg, char** out_json);

PFT_API size_t pft_config_key_count(void);
PFT_API const char* pft_config_key_name(size_t index);
/* "integer", "number", "boolean", "string" or "string_list". */
PFT_API const char* pft_config_key_type(size_t index);
PFT_API const char* pft_config_key_default(size_t index);
PFT_API const char* pft_config_key_help(size_t index);

/* Commands. `out_text` receives stdout text; `out_warnings` receives
 * newline-terminated warnings. Either out-parameter may be NULL. */
PFT_API size_t pft_command_count(void);
PFT_API const char* pft_command_name(size_t index);
PFT_API pft_status pft_run(const char* command, const pft_config* cfg, char** out_text, char** out_warnings);

/* Tokenizer. */
PFT_API pft_status pft_tokenizer_load(const char* path, pft_tokenizer** out);
PFT_API void pft_tokenizer_free(pft_tokenizer* tok);
PFT_API size_t pft_tokenizer_vocab_size(const pft_tokenizer* tok);
PFT_API pft_status pft_tokenizer_encode(const pft_tokenizer* tok, const char* text, int32_t** out_ids, size_t* out_len);
PFT_API pft_status pft_tokenizer_decode(const pft_tokenizer* tok, const int32_t* ids, size_t len, char** out_text);

/* Models. */
PFT_API pft_status pft_model_load(const char* path, pft_model** out);
/* base_model from `cfg`, with `adapter` applied when set and with_adapter != 0. */
PFT_API pft_status pft_model_load_configured(const pft_config* cfg, int with_adapter, pft_model** out);
PFT_API void pft_model_free(pft_model* model);
PFT_API pft_status pft_model_apply_adapter(pft_model* model, const char* path);
/* Folds LoRA updates into dense weights and drops the adapters. */
PFT_API pft_status pft_model_merge(pft_model* model);
PFT_API pft_status pft_model_save(const pft_model* model, const char* path);
PFT_API size_t pft_model_vocab_size(const pft_model* model);
PFT_API size_t pft_model_seq_len(const pft_model* model);
PFT_API pft_status pft_model_param_counts(const pft_model* model, size_t* trainable, size_t* total);
/* Eval-mode logits for one sequence; `out` holds len * vocab_size floats. */
PFT_API pft_status pft_model_logits(const pft_model* model, const int32_t* ids, size_t len, float* out);

#ifdef __cplusplus
}
#endif

#endif /* PFT_PFT_H_ */

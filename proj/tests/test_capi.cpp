// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exercises libpft through its C interface only.
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "pft/pft.h"

namespace fs = std::filesystem;

namespace {

struct Config {
  pft_config* p = nullptr;
  Config() { REQUIRE(pft_config_new(&p) == PFT_OK); }
  ~Config() { pft_config_free(p); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  pft_string_free(s);
  return out;
}

pft_status run(const char* command, const Config& cfg, std::string* out = nullptr) {
  char* text = nullptr;
  char* warnings = nullptr;
  const pft_status st = pft_run(command, cfg.p, &text, &warnings);
  const std::string t = take(text);
  take(warnings);
  if (out) *out = t;
  return st;
}

fs::path workspace() {
  const auto dir = fs::temp_directory_path() / "pft_test_capi";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "corpus.txt") << "Stocks and bonds are traded on exchanges.\n\n"
                                       "An index tracks a basket of stocks.\n\n"
                                       "Bonds pay a fixed coupon until maturity.\n";
  std::ofstream qa(dir / "qa.csv");
  qa << "QA_text\n";
  for (const char* row : {"##Question: What is an Index?## Answer: An index tracks a basket of stocks.",
                          "##Question: What is a Bond?## Answer: A bond pays a fixed coupon.",
                          "##Question: What is a Stock?## Answer: A stock is a share of a company."})
    qa << '"' << row << "\"\n";
  return dir;
}

}  // namespace

TEST_CASE("config keys, values and errors") {
  Config cfg;
  CHECK(pft_config_key_count() > 40);
  bool found = false;
  for (size_t i = 0; i < pft_config_key_count(); ++i) {
    if (std::string(pft_config_key_name(i)) == "lora_alpha") {
      found = true;
      CHECK(std::string(pft_config_key_default(i)) == "32");
    }
  }
  CHECK(found);
  CHECK(pft_config_key_name(pft_config_key_count()) == nullptr);

  char* json = nullptr;
  REQUIRE(pft_config_get_json(cfg.p, "r", &json) == PFT_OK);
  CHECK(take(json) == "32");
  CHECK(pft_config_set(cfg.p, "r", "8") == PFT_OK);
  REQUIRE(pft_config_get_json(cfg.p, "r", &json) == PFT_OK);
  CHECK(take(json) == "8");
  CHECK(pft_config_set(cfg.p, "target_modules", "dense,query_key_value") == PFT_OK);
  REQUIRE(pft_config_get_json(cfg.p, "target_modules", &json) == PFT_OK);
  CHECK(take(json) == "[\"dense\",\"query_key_value\"]");

  CHECK(pft_config_set(cfg.p, "r", "eight") == PFT_ERR_CONFIG);
  CHECK(std::string(pft_last_error_kind()) == "config");
  CHECK(std::string(pft_last_error()).find("r") != std::string::npos);
  CHECK(pft_config_set(cfg.p, "no_such_key", "1") == PFT_ERR_CONFIG);
  CHECK(pft_config_merge_json(cfg.p, "{\"r\": \"x\"}") == PFT_ERR_CONFIG);
  CHECK(pft_config_merge_json(cfg.p, "{oops") != PFT_OK);
  CHECK(pft_config_merge_file(cfg.p, "/nonexistent/config.json") == PFT_ERR_DATA);
  CHECK(std::string(pft_last_error_kind()) == "io");
  CHECK(pft_config_set(nullptr, "r", "1") == PFT_ERR_RUNTIME);
  CHECK(std::string(pft_last_error_kind()) == "contract");

  pft_config* copy = nullptr;
  REQUIRE(pft_config_clone(cfg.p, &copy) == PFT_OK);
  REQUIRE(pft_config_echo_json(copy, &json) == PFT_OK);
  CHECK(take(json).find("\"r\":8") != std::string::npos);
  pft_config_free(copy);
}

TEST_CASE("command registry and dispatch errors") {
  std::vector<std::string> names;
  for (size_t i = 0; i < pft_command_count(); ++i) names.emplace_back(pft_command_name(i));
  for (const char* c : {"tokenizer-train", "prepare-data", "pretrain", "finetune", "merge", "generate", "eval",
                        "compare", "sweep"})
    CHECK(std::find(names.begin(), names.end(), c) != names.end());
  Config cfg;
  CHECK(run("no-such-command", cfg) == PFT_ERR_CONFIG);
  CHECK(run("finetune", cfg) == PFT_ERR_CONFIG);  // base_model unset
  pft_tokenizer* tok = nullptr;
  CHECK(pft_tokenizer_load("/nonexistent/tok.json", &tok) == PFT_ERR_DATA);
  CHECK(tok == nullptr);
}

TEST_CASE("pipeline through the C interface") {
  const auto dir = workspace();
  Config cfg;
  const std::string setup = "{\"corpus\":\"" + (dir / "corpus.txt").string() + "\",\"dataset\":\"" +
                            (dir / "qa.csv").string() + "\",\"tokenizer\":\"" + (dir / "tok.json").string() +
                            "\",\"vocab_size\":300,\"d_model\":16,\"n_heads\":2,\"n_layers\":1,\"seq_len\":48," +
                            "\"output_dir\":\"" + (dir / "base").string() +
                            "\",\"max_steps\":4,\"save_strategy\":\"no\",\"optim\":\"adamw_32bit\",\"r\":4}";
  REQUIRE(pft_config_merge_json(cfg.p, setup.c_str()) == PFT_OK);
  std::string out;
  REQUIRE(run("tokenizer-train", cfg, &out) == PFT_OK);
  CHECK(out.find("tokenizer:") == 0);
  REQUIRE(run("pretrain", cfg, &out) == PFT_OK);
  CHECK(out.find("TrainOutput(global_step=4") != std::string::npos);

  const std::string ft = "{\"base_model\":\"" + (dir / "base" / "model.pfwa").string() + "\",\"output_dir\":\"" +
                         (dir / "ft").string() + "\",\"method\":\"qlora\",\"load_in_4bit\":true}";
  REQUIRE(pft_config_merge_json(cfg.p, ft.c_str()) == PFT_OK);
  REQUIRE(run("finetune", cfg, &out) == PFT_OK);
  CHECK(out.find("trainable params: 1024 ||") != std::string::npos);
  CHECK(fs::exists(dir / "ft" / "adapter_model.pfwa"));

  pft_tokenizer* tok = nullptr;
  REQUIRE(pft_tokenizer_load((dir / "tok.json").string().c_str(), &tok) == PFT_OK);
  int32_t* ids = nullptr;
  size_t len = 0;
  REQUIRE(pft_tokenizer_encode(tok, "An index tracks stocks.", &ids, &len) == PFT_OK);
  char* text = nullptr;
  REQUIRE(pft_tokenizer_decode(tok, ids, len, &text) == PFT_OK);
  CHECK(take(text) == "An index tracks stocks.");

  pft_model* base = nullptr;
  pft_model* adapted = nullptr;
  REQUIRE(pft_model_load((dir / "base" / "model.pfwa").string().c_str(), &base) == PFT_OK);
  REQUIRE(pft_config_set(cfg.p, "adapter", (dir / "ft" / "adapter_model.pfwa").string().c_str()) == PFT_OK);
  REQUIRE(pft_model_load_configured(cfg.p, 1, &adapted) == PFT_OK);
  size_t trainable = 0, total = 0;
  REQUIRE(pft_model_param_counts(adapted, &trainable, &total) == PFT_OK);
  CHECK(trainable == 1024);
  CHECK(pft_model_vocab_size(adapted) == pft_tokenizer_vocab_size(tok));

  const size_t V = pft_model_vocab_size(adapted);
  std::vector<float> a(len * V), m(len * V);
  REQUIRE(pft_model_logits(adapted, ids, len, a.data()) == PFT_OK);
  REQUIRE(pft_model_merge(adapted) == PFT_OK);
  CHECK(pft_model_merge(adapted) == PFT_ERR_RUNTIME);
  CHECK(std::string(pft_last_error_kind()) == "state");
  REQUIRE(pft_model_logits(adapted, ids, len, m.data()) == PFT_OK);
  double diff = 0, ref = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, static_cast<double>(std::abs(a[i] - m[i])));
    ref = std::max(ref, static_cast<double>(std::abs(a[i])));
  }
  CHECK(diff / ref < 1e-5);
  CHECK(pft_model_logits(adapted, ids, 0, m.data()) == PFT_ERR_DATA);
  CHECK(std::string(pft_last_error_kind()) == "input");

  REQUIRE(pft_model_save(adapted, (dir / "merged.pfwa").string().c_str()) == PFT_OK);
  pft_model* other = nullptr;
  REQUIRE(pft_model_load((dir / "base" / "model.pfwa").string().c_str(), &other) == PFT_OK);
  CHECK(pft_model_apply_adapter(other, (dir / "merged.pfwa").string().c_str()) == PFT_ERR_DATA);

  pft_ids_free(ids);
  pft_tokenizer_free(tok);
  pft_model_free(base);
  pft_model_free(adapted);
  pft_model_free(other);
}

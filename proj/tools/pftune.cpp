// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
//
// pftune: command-line front end over the libpft C interface.
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pft/pft.h"

namespace {

struct Owned {
  char* p = nullptr;
  ~Owned() { pft_string_free(p); }
};

int report(pft_status st) {
  std::fprintf(stderr, "pftune: error[%s]: %s\n", pft_last_error_kind(), pft_last_error());
  return static_cast<int>(st);
}

void print_warnings(const char* text) {
  if (!text) return;
  std::string s(text);
  std::size_t start = 0;
  while (start < s.size()) {
    const auto end = s.find('\n', start);
    std::fprintf(stderr, "pftune: warning: %s\n", s.substr(start, end - start).c_str());
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

void add_key_options(CLI::App& sub, Invocation& inv) {
  sub.add_option("--config", inv.config_path, "JSON config file; flags override its values");
  for (std::size_t i = 0; i < pft_config_key_count(); ++i) {
    const std::string name = pft_config_key_name(i);
    const std::string type = pft_config_key_type(i);
    std::string help = std::string(pft_config_key_help(i)) + " [" + type + ", default " + pft_config_key_default(i) + "]";
    auto* opt = sub.add_option("--" + name, inv.values[name], help);
    if (type == "boolean") opt->expected(0, 1);
    inv.options[name] = opt;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pftune: parameter-efficient fine-tuning of small causal language models"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Invocation>> invocations;
  std::map<CLI::App*, std::string> names;
  for (std::size_t i = 0; i < pft_command_count(); ++i) {
    const std::string name = pft_command_name(i);
    auto* sub = app.add_subcommand(name, "run " + name);
    invocations.push_back(std::make_unique<Invocation>());
    add_key_options(*sub, *invocations.back());
    names[sub] = name;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "pftune: error[usage]: %s\n", e.what());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  std::size_t index = 0;
  for (std::size_t i = 0; i < pft_command_count(); ++i)
    if (names[sub] == pft_command_name(i)) index = i;
  const Invocation& inv = *invocations[index];

  pft_config* raw = nullptr;
  if (auto st = pft_config_new(&raw); st != PFT_OK) return report(st);
  std::unique_ptr<pft_config, decltype(&pft_config_free)> cfg(raw, pft_config_free);
  if (!inv.config_path.empty()) {
    if (auto st = pft_config_merge_file(cfg.get(), inv.config_path.c_str()); st != PFT_OK) return report(st);
  }
  for (const auto& [key, opt] : inv.options) {
    if (opt->count() == 0) continue;
    std::string value = inv.values.at(key);
    if (value.empty() && opt->get_expected_min() == 0) value = "true";
    if (auto st = pft_config_set(cfg.get(), key.c_str(), value.c_str()); st != PFT_OK) return report(st);
  }

  Owned out, warnings;
  const pft_status st = pft_run(names[sub].c_str(), cfg.get(), &out.p, &warnings.p);
  print_warnings(warnings.p);
  if (st != PFT_OK) return report(st);
  if (out.p) std::fputs(out.p, stdout);
  return 0;
}

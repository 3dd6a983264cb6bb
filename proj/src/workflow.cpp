// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/workflow.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "pft/error.hpp"
#include "pft/eval.hpp"
#include "pft/peft.hpp"
#include "pft/store.hpp"

namespace pft {
namespace {

using json = nlohmann::json;

std::vector<KeyInfo> build_keys() {
  auto q = [](std::string_view s) { return json(std::string(s)).dump(); };
  return {
      // model
      {"vocab_size", KeyType::integer, "512", "model vocabulary size (>= tokenizer vocabulary)"},
      {"d_model", KeyType::integer, "64", "model width"},
      {"n_heads", KeyType::integer, "4", "attention heads"},
      {"n_layers", KeyType::integer, "2", "transformer blocks"},
      {"seq_len", KeyType::integer, "128", "context length"},
      {"layer_norm_eps", KeyType::number, "1e-05", "layer norm epsilon"},
      // files
      {"corpus", KeyType::string, q(""), "plain-text corpus, documents separated by blank lines"},
      {"dataset", KeyType::string, q(""), "QA CSV used for training"},
      {"train_file", KeyType::string, q(""), "prepared dataset JSON (prepare-data output, finetune input)"},
      {"eval_dataset", KeyType::string, q(""), "held-out QA CSV"},
      {"sentiment_dataset", KeyType::string, q(""), "CSV with text,label columns for likelihood classification"},
      {"tokenizer", KeyType::string, q(""), "tokenizer JSON"},
      {"base_model", KeyType::string, q(""), "base model archive"},
      {"adapter", KeyType::string, q(""), "adapter archive applied on top of base_model"},
      {"adapted_model", KeyType::string, q(""), "fully fine-tuned model archive (compare/eval)"},
      {"output", KeyType::string, q(""), "output file for merge (default <output_dir>/merged_model.pfwa)"},
      {"search_space", KeyType::string, q(""), "sweep search-space JSON: key -> list of values"},
      {"resume_from_checkpoint", KeyType::string, q(""), "checkpoint directory to resume from"},
      // tokenizer and preprocessing
      {"domain_terms", KeyType::string_list, "[]", "atomic domain tokens"},
      {"normalize", KeyType::boolean, "true", "apply text normalization"},
      {"text_profile", KeyType::string, q("lm"), "lm | analysis"},
      {"stopwords", KeyType::string_list, "[]", "stop words removed under the analysis profile"},
      {"redact_patterns", KeyType::string_list, "[]", "ECMAScript patterns replaced by [REDACTED]"},
      {"augment_shuffle", KeyType::boolean, "false", "shuffle words within sentences of training text"},
      {"augment_p", KeyType::number, "0.0", "per-sentence shuffle probability"},
      {"mask_prompt", KeyType::boolean, "true", "compute loss on answer tokens only"},
      {"template", KeyType::string, q(kDefaultTrainTemplate), "training template with {question} and {answer}"},
      {"inference_template", KeyType::string, q(kDefaultInferenceTemplate), "generation template with {question}"},
      // training
      {"output_dir", KeyType::string, q("results"), "run directory"},
      {"per_device_train_batch_size", KeyType::integer, "2", "examples per micro-batch"},
      {"gradient_accumulation_steps", KeyType::integer, "2", "micro-batches per optimizer step"},
      {"optim", KeyType::string, q("paged_adamw_32bit"), "adamw_32bit | paged_adamw_32bit"},
      {"save_strategy", KeyType::string, q("steps"), "steps | no"},
      {"save_steps", KeyType::integer, "10", "optimizer steps between checkpoints"},
      {"logging_steps", KeyType::integer, "10", "optimizer steps between metrics records"},
      {"learning_rate", KeyType::number, "0.0002", "AdamW learning rate"},
      {"max_grad_norm", KeyType::number, "0.3", "global gradient-norm clip"},
      {"max_steps", KeyType::integer, "60", "optimizer steps"},
      {"warmup_ratio", KeyType::number, "0.03", "fraction of steps with linear warmup"},
      {"lr_scheduler_type", KeyType::string, q("cosine"), "cosine | constant"},
      {"seed", KeyType::integer, "42", "seed for every random draw"},
      {"epochs", KeyType::integer, "0", "when > 0, overrides max_steps"},
      {"weight_decay", KeyType::number, "0.0", "decoupled AdamW weight decay"},
      {"page_budget", KeyType::integer, "1", "resident optimizer pages when paged"},
      // peft
      {"method", KeyType::string, q("lora"), "full | lora | qlora | adapter"},
      {"r", KeyType::integer, "32", "LoRA rank"},
      {"lora_alpha", KeyType::number, "32", "LoRA scaling numerator"},
      {"lora_dropout", KeyType::number, "0.05", "LoRA input dropout"},
      {"target_modules", KeyType::string_list, R"(["query_key_value","dense","dense_h_to_4h","dense_4h_to_h"])",
       "LoRA target module suffixes"},
      {"bias", KeyType::string, q("none"), "LoRA bias mode (none)"},
      {"task_type", KeyType::string, q("CAUSAL_LM"), "LoRA task type"},
      {"lora_init_std", KeyType::number, "0.0", "std of the LoRA A init; 0 means 1/sqrt(r)"},
      {"bottleneck_dim", KeyType::integer, "16", "bottleneck adapter width"},
      // quantization
      {"load_in_4bit", KeyType::boolean, "false", "quantize the base before attaching adapters (implied by qlora)"},
      {"bnb_4bit_quant_type", KeyType::string, q("nf4"), "nf4 | uniform4"},
      {"bnb_4bit_use_double_quant", KeyType::boolean, "true", "quantize the block scales to 8 bits"},
      {"bnb_4bit_compute_dtype", KeyType::string, q("float32"), "compute dtype; bfloat16 is accepted and run in float32"},
      {"quant_block_size", KeyType::integer, "64", "weights per quantization block"},
      {"quant_dq_group", KeyType::integer, "256", "block scales per double-quantization group"},
      // generation and evaluation
      {"prompt", KeyType::string, q(""), "raw prompt for generate"},
      {"question", KeyType::string, q(""), "question rendered through inference_template"},
      {"questions", KeyType::string_list, R"(["What is an Index?"])", "questions for compare"},
      {"max_new_tokens", KeyType::integer, "48", "generated tokens"},
      {"do_sample", KeyType::boolean, "false", "sample instead of greedy decoding"},
      {"temperature", KeyType::number, "1.0", "sampling temperature"},
      {"top_k", KeyType::integer, "0", "top-k sampling cutoff (0 = all)"},
      {"sentiment_labels", KeyType::string_list, R"(["negative","positive"])", "closed label set"},
      {"sentiment_template", KeyType::string, q("Headline: {question}\nSentiment: "), "classification prompt"},
      {"generation_metrics", KeyType::boolean, "true", "score greedy answers with exact match, BLEU and ROUGE-L"},
      // sweep
      {"search_strategy", KeyType::string, q("grid"), "grid | random"},
      {"search_budget", KeyType::integer, "4", "trials for random search"},
  };
}

bool type_ok(KeyType t, const json& v) {
  switch (t) {
    case KeyType::integer:
      return v.is_number_integer() || (v.is_number_float() && v.get<double>() == static_cast<double>(static_cast<std::int64_t>(v.get<double>())));
    case KeyType::number:
      return v.is_number();
    case KeyType::boolean:
      return v.is_boolean();
    case KeyType::string:
      return v.is_string();
    case KeyType::string_list:
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!e.is_string()) return false;
      return true;
  }
  return false;
}

const KeyInfo& key_info(std::string_view key) {
  for (const auto& k : config_keys())
    if (k.name == key) return k;
  fail(ErrorKind::config, "unknown configuration key '" + std::string(key) + "'");
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& p, std::string_view text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  write_file_atomic(p, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string require_path(const RunConfig& cfg, std::string_view key) {
  auto v = cfg.string(key);
  if (v.empty()) fail(ErrorKind::config, "missing required setting '" + std::string(key) + "'");
  return v;
}

void echo_config(const RunConfig& cfg, std::string_view command) {
  const std::filesystem::path dir = cfg.string("output_dir");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "output_dir " + dir.string() + " cannot be created: " + ec.message());
  json echo = json::parse(cfg.echo_json());
  echo["command"] = std::string(command);
  write_text(dir / "config.echo.json", echo.dump(2) + "\n");
}

/// Blank-line separated paragraphs.
std::vector<std::string> read_documents(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> docs;
  std::string cur;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      if (!cur.empty()) docs.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += (cur.empty() ? "" : "\n") + line;
    }
  }
  if (!cur.empty()) docs.push_back(std::move(cur));
  return docs;
}

std::vector<QAPair> preprocessed_pairs(const RunConfig& cfg, const std::filesystem::path& path, bool augment,
                                       Warnings* warnings) {
  auto pairs = load_qa_csv(path, warnings);
  auto pc = cfg.preprocess_config();
  if (!augment) pc.augment_shuffle = false;
  Rng rng(static_cast<std::uint64_t>(cfg.integer("seed")));
  for (auto& p : pairs) {
    p.question = preprocess(p.question, pc, &rng);
    p.answer = preprocess(p.answer, pc, &rng);
  }
  return pairs;
}

Tokenizer configured_tokenizer(const RunConfig& cfg) { return Tokenizer::load(require_path(cfg, "tokenizer")); }

void check_vocab(const CausalLM& model, const Tokenizer& tok) {
  if (tok.vocab_size() > model.config().vocab_size) {
    fail(ErrorKind::config, "tokenizer has " + std::to_string(tok.vocab_size()) + " tokens but the model vocabulary is " +
                                std::to_string(model.config().vocab_size));
  }
}

std::string method_of(const RunConfig& cfg) {
  const auto m = cfg.string("method");
  if (m != "full" && m != "lora" && m != "qlora" && m != "adapter") {
    fail(ErrorKind::config, "method must be full, lora, qlora or adapter, got '" + m + "'");
  }
  return m;
}

/// Prepares `model` for fine-tuning and returns what an adapter archive must record.
AdapterMeta prepare_method(CausalLM& model, const RunConfig& cfg, const std::string& method, Rng& rng) {
  AdapterMeta meta;
  meta.base_fingerprint = base_fingerprint(model);
  if (method == "full") {
    model.set_all_trainable(true);
    return meta;
  }
  if (method == "qlora" || cfg.boolean("load_in_4bit")) {
    if (method == "adapter") fail(ErrorKind::config, "load_in_4bit applies to lora/qlora only");
    meta.quant = cfg.quant_config();
    quantize_base(model, *meta.quant);
  }
  if (method == "adapter") {
    meta.bottleneck = cfg.bottleneck_config();
    attach_bottleneck(model, *meta.bottleneck, rng);
  } else {
    meta.lora = cfg.lora_config();
    attach_lora(model, *meta.lora, rng);
  }
  return meta;
}

std::vector<TrainingExample> finetune_examples(const RunConfig& cfg, const Tokenizer& tok, Warnings& warnings) {
  const auto train_file = cfg.string("train_file");
  if (!train_file.empty() && std::filesystem::exists(train_file)) {
    std::size_t len = 0;
    auto ex = examples_from_json(read_text(train_file), &len);
    if (len > static_cast<std::size_t>(cfg.integer("seq_len"))) {
      fail(ErrorKind::config, "train_file was prepared for seq_len " + std::to_string(len) + ", larger than the model's");
    }
    return ex;
  }
  BuildReport rep;
  auto ex = configured_examples(cfg, tok, "dataset", &rep);
  warnings.insert(warnings.end(), rep.warnings.begin(), rep.warnings.end());
  return ex;
}

std::string format_double(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string generate_text(const CausalLM& model, const Tokenizer& tok, std::string_view prompt,
                          const GenerationConfig& gen, std::uint64_t seed, std::string* completion = nullptr) {
  std::vector<std::int32_t> ids{Tokenizer::kBos};
  const auto p = tok.encode(prompt);
  ids.insert(ids.end(), p.begin(), p.end());
  Rng rng(seed);
  const auto out = generate(model, ids, gen, &rng);
  if (completion) *completion = tok.decode(std::span(out).subspan(ids.size()));
  return tok.decode(out);
}

struct TrialOutcome {
  double objective;
  double mean_loss;
};

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = build_keys();
  return keys;
}

std::string_view to_string(KeyType t) noexcept {
  switch (t) {
    case KeyType::integer: return "integer";
    case KeyType::number: return "number";
    case KeyType::boolean: return "boolean";
    case KeyType::string: return "string";
    case KeyType::string_list: return "string_list";
  }
  return "?";
}

struct RunConfig::Impl {
  json values = json::object();
  std::set<std::string> explicitly_set;
};

RunConfig::RunConfig() : impl_(std::make_unique<Impl>()) {
  for (const auto& k : config_keys()) impl_->values[k.name] = json::parse(k.default_json);
}
RunConfig::RunConfig(const RunConfig& o) : impl_(std::make_unique<Impl>(*o.impl_)) {}
RunConfig& RunConfig::operator=(const RunConfig& o) {
  impl_ = std::make_unique<Impl>(*o.impl_);
  return *this;
}
RunConfig::~RunConfig() = default;

void RunConfig::merge_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("config: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::config, "config: top level must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto& info = key_info(it.key());
    json v = it.value();
    if (info.type == KeyType::integer && v.is_number_float() && type_ok(info.type, v)) v = v.get<std::int64_t>();
    if (!type_ok(info.type, v)) {
      fail(ErrorKind::config, "config: key '" + it.key() + "' expects " + std::string(to_string(info.type)) +
                                  ", got " + v.dump());
    }
    impl_->values[it.key()] = v;
    impl_->explicitly_set.insert(it.key());
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) { merge_json(read_text(path)); }

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& info = key_info(key);
  const std::string k(key), s(value);
  json v;
  try {
    switch (info.type) {
      case KeyType::integer: {
        std::size_t used = 0;
        v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        break;
      }
      case KeyType::number: {
        std::size_t used = 0;
        v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        break;
      }
      case KeyType::boolean:
        if (s == "true" || s == "1") v = true;
        else if (s == "false" || s == "0") v = false;
        else throw std::invalid_argument(s);
        break;
      case KeyType::string:
        v = s;
        break;
      case KeyType::string_list:
        if (!s.empty() && s.front() == '[') {
          v = json::parse(s);
          if (!type_ok(info.type, v)) throw std::invalid_argument(s);
        } else {
          v = json::array();
          std::stringstream ss(s);
          for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty()) v.push_back(item);
        }
        break;
    }
  } catch (const std::exception&) {
    fail(ErrorKind::config, "setting '" + k + "' expects " + std::string(to_string(info.type)) + ", got '" + s + "'");
  }
  impl_->values[k] = v;
  impl_->explicitly_set.insert(k);
}

bool RunConfig::is_set(std::string_view key) const { return impl_->explicitly_set.count(std::string(key)) > 0; }

std::int64_t RunConfig::integer(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).get<std::int64_t>();
}
double RunConfig::number(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).get<double>();
}
bool RunConfig::boolean(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).get<bool>();
}
std::string RunConfig::string(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).get<std::string>();
}
std::vector<std::string> RunConfig::strings(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).get<std::vector<std::string>>();
}
std::string RunConfig::value_json(std::string_view key) const {
  key_info(key);
  return impl_->values.at(std::string(key)).dump();
}
std::string RunConfig::echo_json() const { return impl_->values.dump(); }

namespace {
std::size_t non_negative(const RunConfig& c, std::string_view key) {
  const auto v = c.integer(key);
  if (v < 0) fail(ErrorKind::config, "setting '" + std::string(key) + "' must be >= 0");
  return static_cast<std::size_t>(v);
}
}  // namespace

CausalLMConfig RunConfig::model_config() const {
  CausalLMConfig c;
  c.vocab_size = non_negative(*this, "vocab_size");
  c.d_model = non_negative(*this, "d_model");
  c.n_heads = non_negative(*this, "n_heads");
  c.n_layers = non_negative(*this, "n_layers");
  c.seq_len = non_negative(*this, "seq_len");
  c.layer_norm_eps = static_cast<float>(number("layer_norm_eps"));
  c.validate();
  return c;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.output_dir = string("output_dir");
  t.per_device_train_batch_size = non_negative(*this, "per_device_train_batch_size");
  t.gradient_accumulation_steps = non_negative(*this, "gradient_accumulation_steps");
  t.optim = optim_from_string(string("optim"));
  t.save_strategy = string("save_strategy");
  t.save_steps = non_negative(*this, "save_steps");
  t.logging_steps = non_negative(*this, "logging_steps");
  t.learning_rate = static_cast<float>(number("learning_rate"));
  t.max_grad_norm = static_cast<float>(number("max_grad_norm"));
  t.max_steps = non_negative(*this, "max_steps");
  t.warmup_ratio = static_cast<float>(number("warmup_ratio"));
  t.lr_scheduler_type = scheduler_from_string(string("lr_scheduler_type"));
  t.seed = static_cast<std::uint64_t>(integer("seed"));
  if (const auto e = non_negative(*this, "epochs")) t.epochs = e;
  t.weight_decay = static_cast<float>(number("weight_decay"));
  t.page_budget = non_negative(*this, "page_budget");
  t.validate();
  return t;
}

LoraConfig RunConfig::lora_config() const {
  LoraConfig l;
  l.r = non_negative(*this, "r");
  l.alpha = static_cast<float>(number("lora_alpha"));
  l.dropout = static_cast<float>(number("lora_dropout"));
  l.target_modules = strings("target_modules");
  l.bias = string("bias");
  l.task_type = string("task_type");
  l.init_std = static_cast<float>(number("lora_init_std"));
  l.validate();
  return l;
}

BottleneckAdapterConfig RunConfig::bottleneck_config() const {
  return BottleneckAdapterConfig{non_negative(*this, "bottleneck_dim"), "gelu"};
}

QuantConfig RunConfig::quant_config() const {
  QuantConfig q;
  q.codebook = codebook_from_string(string("bnb_4bit_quant_type"));
  q.double_quant = boolean("bnb_4bit_use_double_quant");
  q.block_size = non_negative(*this, "quant_block_size");
  q.dq_group = non_negative(*this, "quant_dq_group");
  const auto dtype = string("bnb_4bit_compute_dtype");
  if (dtype != "float32" && dtype != "bfloat16") {
    fail(ErrorKind::config, "bnb_4bit_compute_dtype must be float32 or bfloat16, got '" + dtype + "'");
  }
  q.validate();
  return q;
}

PreprocessConfig RunConfig::preprocess_config() const {
  PreprocessConfig p;
  p.normalize = boolean("normalize");
  const auto profile = string("text_profile");
  if (profile == "lm") p.profile = TextProfile::lm;
  else if (profile == "analysis") p.profile = TextProfile::analysis;
  else fail(ErrorKind::config, "text_profile must be lm or analysis, got '" + profile + "'");
  const auto sw = strings("stopwords");
  if (!sw.empty()) p.stopwords = std::set<std::string>(sw.begin(), sw.end());
  p.redact_patterns = strings("redact_patterns");
  p.augment_shuffle = boolean("augment_shuffle");
  p.augment_p = number("augment_p");
  if (!(p.augment_p >= 0.0 && p.augment_p <= 1.0)) fail(ErrorKind::config, "augment_p must be in [0, 1]");
  return p;
}

GenerationConfig RunConfig::generation_config() const {
  GenerationConfig g;
  g.max_new_tokens = non_negative(*this, "max_new_tokens");
  g.sample = boolean("do_sample");
  g.temperature = static_cast<float>(number("temperature"));
  g.top_k = non_negative(*this, "top_k");
  g.eos_id = Tokenizer::kEos;
  return g;
}

std::vector<TrainingExample> configured_examples(const RunConfig& cfg, const Tokenizer& tok, std::string_view key,
                                                 BuildReport* report, std::vector<QAPair>* pairs_out) {
  const bool training = key == "dataset";
  auto pairs = preprocessed_pairs(cfg, require_path(cfg, key), training, report ? &report->warnings : nullptr);
  auto ex = build_examples(pairs, tok, cfg.string("template"), static_cast<std::size_t>(cfg.integer("seq_len")),
                           cfg.boolean("mask_prompt"), report);
  if (pairs_out) *pairs_out = std::move(pairs);
  return ex;
}

CausalLM load_configured_model(const RunConfig& cfg, bool with_adapter) {
  CausalLM model = load_model(require_path(cfg, "base_model"));
  const auto adapter = cfg.string("adapter");
  if (with_adapter && !adapter.empty()) load_adapter(model, adapter);
  return model;
}

CommandResult run_tokenizer_train(const RunConfig& cfg) {
  echo_config(cfg, "tokenizer-train");
  CommandResult r;
  std::vector<std::string> docs;
  const auto pc = cfg.preprocess_config();
  if (!cfg.string("corpus").empty()) {
    for (auto& d : read_documents(cfg.string("corpus"))) docs.push_back(pc.normalize ? normalize_text(d) : d);
  }
  if (!cfg.string("dataset").empty()) {
    for (const auto& p : preprocessed_pairs(cfg, cfg.string("dataset"), false, &r.warnings))
      docs.push_back(render_template(cfg.string("template"), p.question, p.answer));
  }
  if (docs.empty()) fail(ErrorKind::data, "tokenizer-train: set corpus and/or dataset to non-empty files");
  const auto target = static_cast<std::size_t>(cfg.integer("vocab_size"));
  const Tokenizer tok = train_bpe(docs, target, cfg.strings("domain_terms"));
  const auto path = require_path(cfg, "tokenizer");
  tok.save(path);
  std::ostringstream out;
  out << "tokenizer: " << tok.vocab_size() << " tokens (" << tok.merges().size() << " merges, "
      << tok.domain_terms().size() << " domain terms) from " << docs.size() << " documents -> " << path << "\n";
  if (tok.vocab_size() < target) {
    r.warnings.push_back("corpus ran out of pairs; vocabulary stopped at " + std::to_string(tok.vocab_size()));
  }
  r.output = out.str();
  return r;
}

CommandResult run_prepare_data(const RunConfig& cfg) {
  echo_config(cfg, "prepare-data");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  BuildReport rep;
  std::vector<QAPair> pairs;
  const auto ex = configured_examples(cfg, tok, "dataset", &rep, &pairs);
  const auto path = require_path(cfg, "train_file");
  write_text(path, examples_to_json(ex, static_cast<std::size_t>(cfg.integer("seq_len"))));
  std::size_t tokens = 0, answer_tokens = 0;
  for (const auto& e : ex) {
    tokens += e.length();
    answer_tokens += e.unmasked_count();
  }
  std::ostringstream out;
  out << "rows: " << pairs.size() << "\naccepted: " << rep.accepted << "\nrejected: " << rep.rejected
      << "\ntruncated: " << rep.truncated << "\ntokens: " << tokens << "\nlabelled tokens: " << answer_tokens
      << "\nwritten: " << path << "\n";
  r.output = out.str();
  r.warnings = rep.warnings;
  return r;
}

CommandResult run_pretrain(const RunConfig& cfg) {
  const TrainConfig tc = cfg.train_config();
  echo_config(cfg, "pretrain");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  const auto mc = cfg.model_config();
  std::vector<std::string> docs;
  for (auto& d : read_documents(require_path(cfg, "corpus"))) docs.push_back(normalize_text(d));
  const auto data = build_lm_windows(docs, tok, mc.seq_len);
  if (data.empty()) fail(ErrorKind::data, "pretrain: corpus produced no training windows");
  Rng init(tc.seed);
  CausalLM model = init_model(mc, init);
  check_vocab(model, tok);
  TrainOptions opts;
  if (!cfg.string("resume_from_checkpoint").empty()) opts.resume_from = cfg.string("resume_from_checkpoint");
  const auto res = train_loop(model, data, tc, opts);
  const auto path = tc.output_dir / "model.pfwa";
  model.set_all_trainable(false);
  save_model(model, path);
  std::ostringstream out;
  out << "parameters: " << mc.parameter_count() << "\nwindows: " << data.size()
      << "\nTrainOutput(global_step=" << res.state.global_step << ", training_loss=" << format_double(res.mean_loss, 10)
      << ")\nmodel: " << path.string() << "\n";
  r.output = out.str();
  r.warnings = res.warnings;
  return r;
}

CommandResult run_finetune(const RunConfig& cfg) {
  const TrainConfig tc = cfg.train_config();
  const std::string method = method_of(cfg);
  echo_config(cfg, "finetune");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  CausalLM model = load_model(require_path(cfg, "base_model"));
  check_vocab(model, tok);
  if (cfg.string("bnb_4bit_compute_dtype") == "bfloat16") {
    r.warnings.push_back("bnb_4bit_compute_dtype=bfloat16 runs in float32");
  }
  const auto data = finetune_examples(cfg, tok, r.warnings);
  if (data.empty()) fail(ErrorKind::data, "finetune: no usable training examples");
  Rng attach_rng = Rng(tc.seed).fork();
  const AdapterMeta meta = prepare_method(model, cfg, method, attach_rng);
  const auto summary = trainable_summary(model);

  TrainOptions opts;
  if (!cfg.string("resume_from_checkpoint").empty()) opts.resume_from = cfg.string("resume_from_checkpoint");
  const auto res = train_loop(model, data, tc, opts);
  r.warnings.insert(r.warnings.end(), res.warnings.begin(), res.warnings.end());

  std::filesystem::path artifact;
  if (method == "full") {
    artifact = tc.output_dir / "model.pfwa";
    save_model(model, artifact);
  } else {
    artifact = tc.output_dir / "adapter_model.pfwa";
    save_adapter(model, meta, artifact);
  }
  std::ostringstream out;
  out << "method: " << method << "\nexamples: " << data.size() << "\ntrainable params: " << summary.trainable
      << " || all params: " << summary.total << " || trainable%: " << format_double(100.0 * summary.ratio, 6)
      << "\n";
  for (const auto& rec : res.records) {
    out << "step " << rec.step << "  training_loss " << format_double(rec.training_loss, 5) << "  learning_rate "
        << format_double(rec.learning_rate, 5) << "\n";
  }
  out << "TrainOutput(global_step=" << res.state.global_step << ", training_loss=" << format_double(res.mean_loss, 10)
      << ")\ncheckpoints: " << res.checkpoints.size() << "\nartifact: " << artifact.string() << " ("
      << std::filesystem::file_size(artifact) << " bytes)\n";
  r.output = out.str();
  return r;
}

CommandResult run_merge(const RunConfig& cfg) {
  echo_config(cfg, "merge");
  CommandResult r;
  CausalLM model = load_model(require_path(cfg, "base_model"));
  const auto meta = read_adapter_meta(load_archive(require_path(cfg, "adapter")));
  if (meta.bottleneck) fail(ErrorKind::config, "merge: bottleneck adapters add layers and cannot be folded into weights");
  load_adapter(model, cfg.string("adapter"));
  merge_lora(model);
  dequantize_base(model);
  model.set_all_trainable(false);
  std::filesystem::path path = cfg.string("output");
  if (path.empty()) path = std::filesystem::path(cfg.string("output_dir")) / "merged_model.pfwa";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_model(model, path);
  r.output = "merged: " + path.string() + " (" + std::to_string(std::filesystem::file_size(path)) + " bytes)\n";
  return r;
}

CommandResult run_generate(const RunConfig& cfg) {
  echo_config(cfg, "generate");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  const CausalLM model = load_configured_model(cfg);
  check_vocab(model, tok);
  std::string prompt;
  if (!cfg.string("question").empty()) {
    prompt = render_template(cfg.string("inference_template"), normalize_text(cfg.string("question")), std::nullopt);
  } else if (!cfg.string("prompt").empty()) {
    prompt = cfg.string("prompt");
  } else {
    fail(ErrorKind::input, "generate: set question or prompt");
  }
  r.output = generate_text(model, tok, prompt, cfg.generation_config(), static_cast<std::uint64_t>(cfg.integer("seed"))) + "\n";
  return r;
}

CommandResult run_eval(const RunConfig& cfg) {
  echo_config(cfg, "eval");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  const CausalLM model = cfg.string("adapted_model").empty() ? load_configured_model(cfg) : load_model(cfg.string("adapted_model"));
  check_vocab(model, tok);
  EvalReport report;
  BuildReport rep;
  std::vector<QAPair> pairs;
  const auto ex = configured_examples(cfg, tok, "eval_dataset", &rep, &pairs);
  r.warnings = rep.warnings;
  if (ex.empty()) fail(ErrorKind::data, "eval: eval_dataset produced no examples");
  report.n_examples = ex.size();
  report.perplexity = perplexity(model, ex);
  if (cfg.boolean("generation_metrics")) {
    std::vector<std::string> cands, refs;
    auto gen = cfg.generation_config();
    gen.sample = false;
    for (const auto& p : pairs) {
      if (p.answer.empty() || p.question.empty()) continue;
      std::string completion;
      generate_text(model, tok, render_template(cfg.string("inference_template"), p.question, std::nullopt), gen, 0,
                    &completion);
      cands.push_back(completion);
      refs.push_back(p.answer);
    }
    report.exact_match = exact_match(cands, refs);
    report.bleu = bleu(cands, refs);
    report.rouge_l = rouge_l(cands, refs);
  }
  if (!cfg.string("sentiment_dataset").empty()) {
    const auto rows = parse_csv(read_text(cfg.string("sentiment_dataset")));
    if (rows.empty() || rows[0].size() < 2) fail(ErrorKind::format, "sentiment_dataset: expected text,label columns");
    const auto labels = cfg.strings("sentiment_labels");
    std::vector<std::string> gold, pred;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() < 2) fail(ErrorKind::format, "sentiment_dataset: row " + std::to_string(i) + " is short");
      const auto prompt = render_template(cfg.string("sentiment_template"), normalize_text(rows[i][0]), std::nullopt);
      gold.push_back(rows[i][1]);
      pred.push_back(classify_by_likelihood(model, tok, prompt, labels));
    }
    report.classification = classification_metrics(gold, pred, labels);
  }
  const auto text = eval_report_json(report, cfg.echo_json());
  write_text(std::filesystem::path(cfg.string("output_dir")) / "eval_report.json", text + "\n");
  r.output = text + "\n";
  return r;
}

CommandResult run_compare(const RunConfig& cfg) {
  echo_config(cfg, "compare");
  CommandResult r;
  const Tokenizer tok = configured_tokenizer(cfg);
  const CausalLM base = load_configured_model(cfg, false);
  const CausalLM adapted = cfg.string("adapted_model").empty() ? load_configured_model(cfg, true)
                                                               : load_model(cfg.string("adapted_model"));
  if (cfg.string("adapter").empty() && cfg.string("adapted_model").empty()) {
    fail(ErrorKind::config, "compare: set adapter or adapted_model");
  }
  if (base.config().vocab_size != adapted.config().vocab_size) {
    fail(ErrorKind::config, "compare: models do not share a vocabulary (" + std::to_string(base.config().vocab_size) +
                                " vs " + std::to_string(adapted.config().vocab_size) + ")");
  }
  check_vocab(base, tok);
  auto gen = cfg.generation_config();
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  std::vector<ComparisonEntry> entries;
  for (const auto& q : cfg.strings("questions")) {
    const auto prompt = render_template(cfg.string("inference_template"), normalize_text(q), std::nullopt);
    entries.push_back({q, generate_text(base, tok, prompt, gen, seed), generate_text(adapted, tok, prompt, gen, seed)});
  }
  std::optional<double> base_ppl, adapted_ppl;
  if (!cfg.string("eval_dataset").empty()) {
    BuildReport rep;
    const auto ex = configured_examples(cfg, tok, "eval_dataset", &rep);
    r.warnings = rep.warnings;
    if (!ex.empty()) {
      base_ppl = perplexity(base, ex);
      adapted_ppl = perplexity(adapted, ex);
    }
  }
  r.output = render_comparison(entries, base_ppl, adapted_ppl);
  write_text(std::filesystem::path(cfg.string("output_dir")) / "compare.txt", r.output);
  return r;
}

CommandResult run_sweep(const RunConfig& cfg) {
  echo_config(cfg, "sweep");
  CommandResult r;
  SearchSpace space;
  {
    json doc;
    try {
      doc = json::parse(read_text(require_path(cfg, "search_space")));
    } catch (const json::exception& e) {
      fail(ErrorKind::config, std::string("search_space: ") + e.what());
    }
    if (!doc.is_object()) fail(ErrorKind::config, "search_space must be a JSON object of value lists");
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      const auto& info = key_info(it.key());
      if (info.type != KeyType::integer && info.type != KeyType::number) {
        fail(ErrorKind::config, "search_space: key '" + it.key() + "' is not numeric");
      }
      if (!it.value().is_array()) fail(ErrorKind::config, "search_space: '" + it.key() + "' must be a list");
      for (const auto& v : it.value()) {
        if (!v.is_number()) fail(ErrorKind::config, "search_space: '" + it.key() + "' holds a non-number");
        space[it.key()].push_back(v.get<double>());
      }
    }
  }
  const auto strategy_name = cfg.string("search_strategy");
  SearchStrategy strategy;
  if (strategy_name == "grid") strategy = SearchStrategy::grid;
  else if (strategy_name == "random") strategy = SearchStrategy::random;
  else fail(ErrorKind::config, "search_strategy must be grid or random, got '" + strategy_name + "'");
  const auto budget = static_cast<std::size_t>(std::max<std::int64_t>(cfg.integer("search_budget"), 0));
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));

  const Tokenizer tok = configured_tokenizer(cfg);
  const CausalLM base = load_model(require_path(cfg, "base_model"));
  check_vocab(base, tok);
  Warnings ignored;
  const auto data = finetune_examples(cfg, tok, ignored);
  if (data.empty()) fail(ErrorKind::data, "sweep: no usable training examples");
  std::vector<TrainingExample> eval_ex;
  if (!cfg.string("eval_dataset").empty()) {
    BuildReport rep;
    eval_ex = configured_examples(cfg, tok, "eval_dataset", &rep);
  }
  const std::string objective_name = eval_ex.empty() ? "mean training loss" : "eval perplexity";
  if (eval_ex.empty()) r.warnings.push_back("sweep: no eval_dataset; ranking by mean training loss");

  const auto trials = hyperparameter_search(space, strategy, budget, seed, [&](const std::map<std::string, double>& p) {
    RunConfig trial = cfg;
    for (const auto& [k, v] : p) {
      std::ostringstream s;
      if (key_info(k).type == KeyType::integer) s << static_cast<std::int64_t>(v);
      else s << std::setprecision(17) << v;
      trial.set(k, s.str());
    }
    TrainConfig tc = trial.train_config();
    CausalLM model = base.clone();
    Rng attach_rng = Rng(tc.seed).fork();
    prepare_method(model, trial, method_of(trial), attach_rng);
    TrainOptions opts;
    opts.write_files = false;
    const auto res = train_loop(model, data, tc, opts);
    return eval_ex.empty() ? res.mean_loss : perplexity(model, eval_ex);
  });

  json table = json::array();
  std::ostringstream out;
  out << "rank  trial  " << objective_name << "  params\n";
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    json params = json::object();
    for (const auto& [k, v] : t.params) {
      if (key_info(k).type == KeyType::integer) params[k] = static_cast<std::int64_t>(v);
      else params[k] = v;
    }
    out << std::setw(4) << i + 1 << "  " << std::setw(5) << t.index << "  " << format_double(t.objective, 8) << "  "
        << params.dump() << "\n";
    table.push_back({{"rank", i + 1}, {"trial", t.index}, {"objective", t.objective}, {"params", params}});
  }
  write_text(std::filesystem::path(cfg.string("output_dir")) / "sweep.json",
             json{{"strategy", strategy_name}, {"objective", objective_name}, {"trials", table}}.dump(2) + "\n");
  r.output = out.str();
  return r;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"tokenizer-train", "prepare-data", "pretrain", "finetune", "merge",
                                              "generate",        "eval",         "compare",  "sweep"};
  return names;
}

CommandResult run_command(std::string_view command, const RunConfig& cfg) {
  if (command == "tokenizer-train") return run_tokenizer_train(cfg);
  if (command == "prepare-data") return run_prepare_data(cfg);
  if (command == "pretrain") return run_pretrain(cfg);
  if (command == "finetune") return run_finetune(cfg);
  if (command == "merge") return run_merge(cfg);
  if (command == "generate") return run_generate(cfg);
  if (command == "eval") return run_eval(cfg);
  if (command == "compare") return run_compare(cfg);
  if (command == "sweep") return run_sweep(cfg);
  fail(ErrorKind::config, "unknown command '" + std::string(command) + "'");
}

}  // namespace pft

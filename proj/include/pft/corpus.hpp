// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pft {

class Rng;

struct QAPair {
  std::string question;
  std::string answer;
  std::size_t row = 0;  // 1-based data row in the source file
};

/// Warnings collected while ingesting data; never fatal.
using Warnings = std::vector<std::string>;

/// Parses RFC-4180 CSV text into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Reads question/answer pairs. Accepts either a fused `QA_text` column of
/// the form "##Question: <q>## Answer: <a>" or separate `question` and
/// `answer` columns.
std::vector<QAPair> load_qa_csv(const std::filesystem::path& path, Warnings* warnings = nullptr);
std::vector<QAPair> parse_qa_csv(std::string_view text, Warnings* warnings = nullptr);
/// Splits one fused cell; throws format error citing `row`.
QAPair parse_qa_cell(std::string_view cell, std::size_t row);

enum class TextProfile { lm, analysis };

struct PreprocessConfig {
  bool normalize = true;
  TextProfile profile = TextProfile::lm;
  std::optional<std::set<std::string>> stopwords;
  std::vector<std::string> redact_patterns;
  bool augment_shuffle = false;
  double augment_p = 0.0;
};

/// Offset of the first invalid UTF-8 byte, if any.
std::optional<std::size_t> find_invalid_utf8(std::string_view s);

/// NFC, control characters (except newline) removed, space/tab runs
/// collapsed, trimmed. Under `analysis`, symbols and emoji are stripped as well.
std::string normalize_text(std::string_view s, TextProfile profile = TextProfile::lm);

/// Drops whitespace-delimited words found in `stopwords` (case-insensitive ASCII).
std::string remove_stopwords(std::string_view s, const std::set<std::string>& stopwords);

inline constexpr std::string_view kRedacted = "[REDACTED]";

/// Compiled ECMAScript patterns; matches are replaced leftmost-first, and
/// among patterns matching at the same position the longest match wins.
class Redactor {
 public:
  explicit Redactor(const std::vector<std::string>& patterns);
  ~Redactor();
  Redactor(Redactor&&) noexcept;
  Redactor& operator=(Redactor&&) noexcept;
  std::string apply(std::string_view s) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string redact(std::string_view s, const std::vector<std::string>& patterns);

/// Permutes words within each sentence (split after . ? !) with probability p.
std::string augment_shuffle(std::string_view text, Rng& rng, double p);

/// Full preprocessing pipeline for one field.
std::string preprocess(std::string_view s, const PreprocessConfig& config, Rng* rng = nullptr);

/// Byte-level BPE with atomic domain terms.
class Tokenizer {
 public:
  static constexpr std::int32_t kBos = 256;
  static constexpr std::int32_t kEos = 257;
  static constexpr std::int32_t kPad = 258;
  static constexpr std::int32_t kFirstLearned = 259;

  Tokenizer();

  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(std::span<const std::int32_t> ids) const;

  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  const std::vector<std::pair<std::int32_t, std::int32_t>>& merges() const noexcept { return merges_; }
  const std::vector<std::string>& domain_terms() const noexcept { return domain_terms_; }

  std::string to_json() const;
  static Tokenizer from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  /// Stable hash of vocabulary and merges.
  std::uint64_t fingerprint() const;

  friend Tokenizer train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab,
                             const std::vector<std::string>& domain_terms);

 private:
  void add_domain_term(const std::string& term);
  void rebuild_index();
  std::vector<std::int32_t> encode_chunk(std::string_view chunk) const;

  std::vector<std::string> vocab_;  // id -> bytes (specials map to "")
  std::vector<std::pair<std::int32_t, std::int32_t>> merges_;
  std::vector<std::string> domain_terms_;
  std::map<std::pair<std::int32_t, std::int32_t>, std::pair<std::size_t, std::int32_t>> merge_rank_;
  std::map<std::string, std::int32_t, std::less<>> term_ids_;
};

/// Splits text into BPE pre-tokens: an optional leading space followed by a
/// run of letters/digits/other-non-space bytes, or a run of whitespace.
std::vector<std::string_view> pretokenize(std::string_view text);

Tokenizer train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab,
                    const std::vector<std::string>& domain_terms = {});

struct TrainingExample {
  std::vector<std::int32_t> input_ids;
  std::vector<std::int32_t> labels;  // aligned with input_ids; -1 = no loss
  std::size_t source_row = 0;

  std::size_t length() const noexcept { return input_ids.size(); }
  std::size_t unmasked_count() const noexcept;
};

inline constexpr std::string_view kDefaultTrainTemplate =
    "Answer the following question truthfully.\n: {question}\n: {answer}";
inline constexpr std::string_view kDefaultInferenceTemplate =
    "Answer the following question truthfully.\n: {question}\n: ";

struct BuildReport {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t truncated = 0;
  Warnings warnings;
};

/// Renders a template with {question} (and {answer} when given).
std::string render_template(std::string_view tmpl, std::string_view question,
                            std::optional<std::string_view> answer);

/// Templated, tokenized examples: BOS + prompt + answer + EOS, truncated on
/// the right to seq_len. With mask_prompt only answer tokens and EOS carry labels.
std::vector<TrainingExample> build_examples(const std::vector<QAPair>& pairs, const Tokenizer& tokenizer,
                                            std::string_view tmpl, std::size_t seq_len, bool mask_prompt,
                                            BuildReport* report = nullptr);

/// Plain-text pretraining windows of at most seq_len tokens, every position labelled.
std::vector<TrainingExample> build_lm_windows(const std::vector<std::string>& documents, const Tokenizer& tokenizer,
                                              std::size_t seq_len);

std::string examples_to_json(const std::vector<TrainingExample>& examples, std::size_t seq_len);
std::vector<TrainingExample> examples_from_json(std::string_view json, std::size_t* seq_len = nullptr);

}  // namespace pft

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pft/corpus.hpp"
#include "pft/model.hpp"

namespace pft {

/// exp(total NLL / unmasked token count), NLL accumulated in double.
double perplexity(const CausalLM& model, const std::vector<TrainingExample>& examples);

struct LabelMetrics {
  std::string label;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct ClassificationReport {
  std::vector<LabelMetrics> per_label;  // in `labels` order
  double accuracy = 0.0;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

/// Per-label one-vs-rest counts over the closed set `labels`; 0/0 is taken as 0.
ClassificationReport classification_metrics(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                                             const std::vector<std::string>& labels);

/// Label whose tokens have the highest mean log-likelihood as a continuation of
/// BOS + prompt; ties go to the lexicographically smaller label.
std::string classify_by_likelihood(const CausalLM& model, const Tokenizer& tokenizer, std::string_view prompt,
                                   const std::vector<std::string>& labels);

/// Whitespace tokens of the LM-normalized text.
std::vector<std::string> metric_tokens(std::string_view text);

/// Corpus BLEU-4 with clipped counts, add-one smoothing for any order whose
/// match count is zero, and brevity penalty exp(1 - r/c) when c < r.
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

/// LCS-based F1 for one pair; 0 when either side is empty.
double rouge_l_pair(std::string_view candidate, std::string_view reference);
/// Mean rouge_l_pair over pairs.
double rouge_l(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

/// Fraction of pairs equal after normalization.
double exact_match(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

struct EvalReport {
  std::size_t n_examples = 0;
  double perplexity = 0.0;
  std::optional<double> exact_match;
  std::optional<double> bleu;
  std::optional<double> rouge_l;
  std::optional<ClassificationReport> classification;
};

std::string eval_report_json(const EvalReport& report, std::string_view config_echo_json);

struct ComparisonEntry {
  std::string question;
  std::string base_text;     // decoded prompt + completion
  std::string adapted_text;
};

/// Plain-text paired report with one labelled section per model.
std::string render_comparison(const std::vector<ComparisonEntry>& entries, std::optional<double> base_perplexity,
                              std::optional<double> adapted_perplexity);

}  // namespace pft

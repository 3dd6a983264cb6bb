// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

#include "pft/autodiff.hpp"
#include "pft/error.hpp"

namespace pft {
namespace {

using json = nlohmann::json;

/// log softmax(row)[target] in double.
double log_prob(const float* row, std::size_t V, std::int32_t target) {
  double mx = row[0];
  for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
  double z = 0.0;
  for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
  return static_cast<double>(row[target]) - mx - std::log(z);
}

Var eval_logits(const CausalLM& model, std::span<const std::int32_t> ids) {
  NoGradGuard no_grad;
  ForwardContext ctx;
  return model.forward(ids, 1, ids.size(), ctx);
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[{toks.begin() + static_cast<std::ptrdiff_t>(i),
                                                          toks.begin() + static_cast<std::ptrdiff_t>(i + n)}];
  return out;
}

void check_pairs(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::input, std::string(what) + ": " + std::to_string(a) + " candidates for " + std::to_string(b) +
                               " references");
  }
}

json classification_json(const ClassificationReport& c) {
  json per = json::array();
  for (const auto& l : c.per_label) {
    per.push_back({{"label", l.label},
                   {"tp", l.tp},
                   {"fp", l.fp},
                   {"fn", l.fn},
                   {"tn", l.tn},
                   {"precision", l.precision},
                   {"recall", l.recall},
                   {"f1", l.f1}});
  }
  return {{"accuracy", c.accuracy},
          {"macro_precision", c.macro_precision},
          {"macro_recall", c.macro_recall},
          {"macro_f1", c.macro_f1},
          {"per_label", per}};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

double perplexity(const CausalLM& model, const std::vector<TrainingExample>& examples) {
  if (examples.empty()) fail(ErrorKind::contract, "perplexity: no examples");
  const std::size_t V = model.config().vocab_size;
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& ex : examples) {
    const Var logits = eval_logits(model, ex.input_ids);
    const float* data = logits.value().ptr();
    for (std::size_t t = 0; t + 1 < ex.length(); ++t) {
      const std::int32_t target = ex.labels[t + 1];
      if (target == ops::kIgnoreIndex) continue;
      nll -= log_prob(data + t * V, V, target);
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::contract, "perplexity: every label position is masked");
  return std::exp(nll / static_cast<double>(count));
}

ClassificationReport classification_metrics(const std::vector<std::string>& gold, const std::vector<std::string>& pred,
                                             const std::vector<std::string>& labels) {
  check_pairs(pred.size(), gold.size(), "classification_metrics");
  std::map<std::string, std::size_t> index;
  for (const auto& l : labels) index.emplace(l, index.size());
  auto idx = [&](const std::string& l) {
    auto it = index.find(l);
    if (it == index.end()) fail(ErrorKind::input, "classification_metrics: unknown label '" + l + "'");
    return it->second;
  };
  ClassificationReport r;
  for (const auto& l : labels) r.per_label.push_back(LabelMetrics{l});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = idx(gold[i]), p = idx(pred[i]);
    correct += g == p;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      auto& m = r.per_label[k];
      if (g == k && p == k) ++m.tp;
      else if (p == k) ++m.fp;
      else if (g == k) ++m.fn;
      else ++m.tn;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  for (auto& m : r.per_label) {
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
  }
  if (!labels.empty()) {
    const auto n = static_cast<double>(labels.size());
    r.macro_precision /= n;
    r.macro_recall /= n;
    r.macro_f1 /= n;
  }
  r.accuracy = ratio(correct, gold.size());
  return r;
}

std::string classify_by_likelihood(const CausalLM& model, const Tokenizer& tokenizer, std::string_view prompt,
                                   const std::vector<std::string>& labels) {
  if (labels.empty()) fail(ErrorKind::input, "classify_by_likelihood: empty label set");
  std::vector<std::int32_t> prefix{Tokenizer::kBos};
  const auto p = tokenizer.encode(prompt);
  prefix.insert(prefix.end(), p.begin(), p.end());
  const std::size_t V = model.config().vocab_size;
  std::optional<std::pair<double, std::string>> best;
  for (const auto& label : labels) {
    const auto lt = tokenizer.encode(label);
    if (lt.empty()) fail(ErrorKind::input, "classify_by_likelihood: label '" + label + "' has no tokens");
    std::vector<std::int32_t> ids = prefix;
    ids.insert(ids.end(), lt.begin(), lt.end());
    if (ids.size() > model.config().seq_len) {
      fail(ErrorKind::input, "classify_by_likelihood: prompt plus label '" + label + "' needs " +
                                 std::to_string(ids.size()) + " tokens, context is " +
                                 std::to_string(model.config().seq_len));
    }
    const Var logits = eval_logits(model, ids);
    double ll = 0.0;
    for (std::size_t j = 0; j < lt.size(); ++j) {
      const std::size_t pos = prefix.size() + j - 1;
      ll += log_prob(logits.value().ptr() + pos * V, V, lt[j]);
    }
    const double mean = ll / static_cast<double>(lt.size());
    if (!best || mean > best->first || (mean == best->first && label < best->second)) best.emplace(mean, label);
  }
  return best->second;
}

std::vector<std::string> metric_tokens(std::string_view text) {
  std::istringstream in(normalize_text(text));
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  check_pairs(candidates.size(), references.size(), "bleu");
  std::size_t c_len = 0, r_len = 0;
  std::array<std::size_t, 4> matched{}, total{};
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto c = metric_tokens(candidates[i]);
    const auto r = metric_tokens(references[i]);
    c_len += c.size();
    r_len += r.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cc = ngram_counts(c, n);
      const auto rc = ngram_counts(r, n);
      for (const auto& [g, k] : cc) {
        total[n - 1] += k;
        auto it = rc.find(g);
        if (it != rc.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }
  if (c_len == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = matched[n] > 0 ? static_cast<double>(matched[n]) / static_cast<double>(total[n])
                                    : 1.0 / static_cast<double>(total[n] + 1);
    log_p += std::log(p) / 4.0;
  }
  const double bp = c_len < r_len ? std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len)) : 1.0;
  return bp * std::exp(log_p);
}

double rouge_l_pair(std::string_view candidate, std::string_view reference) {
  const auto c = metric_tokens(candidate);
  const auto r = metric_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j)
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[r.size()]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(c.size());
  const double rc = lcs / static_cast<double>(r.size());
  return 2.0 * p * rc / (p + rc);
}

double rouge_l(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  check_pairs(candidates.size(), references.size(), "rouge_l");
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l_pair(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

double exact_match(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  check_pairs(candidates.size(), references.size(), "exact_match");
  if (candidates.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) hits += metric_tokens(candidates[i]) == metric_tokens(references[i]);
  return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

std::string eval_report_json(const EvalReport& r, std::string_view config_echo_json) {
  json doc{{"n_examples", r.n_examples},
           {"perplexity", r.perplexity},
           {"exact_match", optional_json(r.exact_match)},
           {"bleu", optional_json(r.bleu)},
           {"rouge_l", optional_json(r.rouge_l)},
           {"classification", r.classification ? classification_json(*r.classification) : json(nullptr)},
           {"qualitative", {{"context_understanding", nullptr}, {"coherence", nullptr}, {"expert_evaluation", nullptr}}},
           {"metric_definitions",
            {{"sentence_generation_accuracy", "exact_match of greedy answers after normalization"},
             {"financial_prediction_accuracy", "classification accuracy by label likelihood"},
             {"bleu", "corpus BLEU-4, clipped counts, add-one smoothing on zero match counts, brevity penalty"},
             {"rouge_l", "LCS F1 (beta = 1), mean over pairs"}}}};
  if (!config_echo_json.empty()) doc["config"] = json::parse(config_echo_json);
  return doc.dump(2);
}

std::string render_comparison(const std::vector<ComparisonEntry>& entries, std::optional<double> base_perplexity,
                              std::optional<double> adapted_perplexity) {
  std::ostringstream out;
  for (const auto& e : entries) {
    out << "-----\nPre-trained Original Model Response:\n" << e.base_text << "\n\n";
    out << "-----\nFinetuning PEFT Model Response:\n" << e.adapted_text << "\n\n";
  }
  out << "-----\n";
  auto ppl = [](std::optional<double> v) {
    if (!v) return std::string("n/a");
    std::ostringstream s;
    s.precision(6);
    s << *v;
    return s.str();
  };
  out << "Held-out perplexity (pre-trained): " << ppl(base_perplexity) << "\n";
  out << "Held-out perplexity (fine-tuned): " << ppl(adapted_perplexity) << "\n";
  return out.str();
}

}  // namespace pft

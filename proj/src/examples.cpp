// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include "json.hpp"

#include "pft/autodiff.hpp"
#include "pft/corpus.hpp"
#include "pft/error.hpp"

namespace pft {
namespace {

constexpr std::string_view kQuestionSlot = "{question}";
constexpr std::string_view kAnswerSlot = "{answer}";

std::string replace_all(std::string_view s, std::string_view from, std::string_view to) {
  std::string out;
  std::size_t pos = 0;
  for (auto at = s.find(from); at != std::string_view::npos; at = s.find(from, pos)) {
    out.append(s.substr(pos, at - pos));
    out.append(to);
    pos = at + from.size();
  }
  out.append(s.substr(pos));
  return out;
}

}  // namespace

std::size_t TrainingExample::unmasked_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int32_t l) { return l != ops::kIgnoreIndex; }));
}

std::string render_template(std::string_view tmpl, std::string_view question, std::optional<std::string_view> answer) {
  if (tmpl.find(kQuestionSlot) == std::string_view::npos) {
    fail(ErrorKind::config, "template is missing the {question} placeholder");
  }
  std::string out = replace_all(tmpl, kQuestionSlot, question);
  if (answer) {
    if (tmpl.find(kAnswerSlot) == std::string_view::npos) {
      fail(ErrorKind::config, "template is missing the {answer} placeholder");
    }
    out = replace_all(out, kAnswerSlot, *answer);
  }
  return out;
}

std::vector<TrainingExample> build_examples(const std::vector<QAPair>& pairs, const Tokenizer& tokenizer,
                                            std::string_view tmpl, std::size_t seq_len, bool mask_prompt,
                                            BuildReport* report) {
  if (tmpl.find(kQuestionSlot) == std::string_view::npos) {
    fail(ErrorKind::config, "template is missing the {question} placeholder");
  }
  const auto answer_at = tmpl.find(kAnswerSlot);
  if (answer_at == std::string_view::npos) fail(ErrorKind::config, "template is missing the {answer} placeholder");
  if (seq_len < 2) fail(ErrorKind::config, "build_examples: seq_len must be >= 2");
  const std::string_view prompt_tmpl = tmpl.substr(0, answer_at);
  const std::string suffix(tmpl.substr(answer_at + kAnswerSlot.size()));

  BuildReport local;
  BuildReport& rep = report ? *report : local;
  std::vector<TrainingExample> out;
  for (const auto& pair : pairs) {
    auto reject = [&](const std::string& why) {
      ++rep.rejected;
      rep.warnings.push_back("row " + std::to_string(pair.row) + ": " + why + "; example rejected");
    };
    if (pair.answer.empty()) {
      reject("empty answer");
      continue;
    }
    if (pair.question.empty()) {
      reject("empty question");
      continue;
    }
    const std::string prompt = replace_all(prompt_tmpl, kQuestionSlot, pair.question);
    const auto prompt_ids = tokenizer.encode(prompt);
    const auto answer_ids = tokenizer.encode(replace_all(pair.answer + suffix, kQuestionSlot, pair.question));

    TrainingExample ex;
    ex.source_row = pair.row;
    ex.input_ids.push_back(Tokenizer::kBos);
    ex.input_ids.insert(ex.input_ids.end(), prompt_ids.begin(), prompt_ids.end());
    const std::size_t answer_start = ex.input_ids.size();
    ex.input_ids.insert(ex.input_ids.end(), answer_ids.begin(), answer_ids.end());
    ex.input_ids.push_back(Tokenizer::kEos);
    ex.labels = ex.input_ids;
    ex.labels[0] = ops::kIgnoreIndex;
    if (mask_prompt) std::fill(ex.labels.begin(), ex.labels.begin() + static_cast<std::ptrdiff_t>(answer_start), ops::kIgnoreIndex);
    if (ex.input_ids.size() > seq_len) {
      ex.input_ids.resize(seq_len);
      ex.labels.resize(seq_len);
      ++rep.truncated;
    }
    // Position 0 is never a prediction target under the next-token shift.
    std::size_t usable = 0;
    for (std::size_t t = 1; t < ex.labels.size(); ++t) usable += ex.labels[t] != ops::kIgnoreIndex;
    if (usable == 0) {
      reject("no answer tokens fit in seq_len " + std::to_string(seq_len));
      continue;
    }
    ++rep.accepted;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TrainingExample> build_lm_windows(const std::vector<std::string>& documents, const Tokenizer& tokenizer,
                                              std::size_t seq_len) {
  if (seq_len < 2) fail(ErrorKind::config, "build_lm_windows: seq_len must be >= 2");
  std::vector<TrainingExample> out;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    std::vector<std::int32_t> ids{Tokenizer::kBos};
    const auto body = tokenizer.encode(documents[d]);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(Tokenizer::kEos);
    for (std::size_t start = 0; start + 1 < ids.size(); start += seq_len - 1) {
      const std::size_t len = std::min(seq_len, ids.size() - start);
      if (len < 2) break;
      TrainingExample ex;
      ex.source_row = d + 1;
      ex.input_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(start),
                          ids.begin() + static_cast<std::ptrdiff_t>(start + len));
      ex.labels = ex.input_ids;
      ex.labels[0] = ops::kIgnoreIndex;
      out.push_back(std::move(ex));
      if (start + len == ids.size()) break;
    }
  }
  return out;
}

std::string examples_to_json(const std::vector<TrainingExample>& examples, std::size_t seq_len) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& ex : examples) {
    rows.push_back({{"row", ex.source_row}, {"input_ids", ex.input_ids}, {"labels", ex.labels}});
  }
  return nlohmann::json{{"version", 1}, {"seq_len", seq_len}, {"examples", rows}}.dump();
}

std::vector<TrainingExample> examples_from_json(std::string_view text, std::size_t* seq_len) {
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<int>() != 1) fail(ErrorKind::version, "dataset: unsupported version");
    const auto len = doc.at("seq_len").get<std::size_t>();
    if (seq_len) *seq_len = len;
    std::vector<TrainingExample> out;
    for (const auto& row : doc.at("examples")) {
      TrainingExample ex;
      ex.source_row = row.at("row").get<std::size_t>();
      ex.input_ids = row.at("input_ids").get<std::vector<std::int32_t>>();
      ex.labels = row.at("labels").get<std::vector<std::int32_t>>();
      if (ex.labels.size() != ex.input_ids.size() || ex.input_ids.size() > len || ex.input_ids.empty()) {
        fail(ErrorKind::format, "dataset: example for row " + std::to_string(ex.source_row) + " has inconsistent lengths");
      }
      out.push_back(std::move(ex));
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("dataset: ") + e.what());
  }
}

}  // namespace pft

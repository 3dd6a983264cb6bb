// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "pft/corpus.hpp"
#include "pft/error.hpp"
#include "pft/rng.hpp"

namespace pft {
namespace {

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_space_tab(UChar32 c) { return c == ' ' || c == '\t'; }

bool strip_under_analysis(UChar32 c) {
  switch (u_charType(c)) {
    case U_OTHER_SYMBOL:
    case U_MODIFIER_SYMBOL:
    case U_MATH_SYMBOL:
    case U_FORMAT_CHAR:
    case U_PRIVATE_USE_CHAR:
    case U_SURROGATE:
    case U_UNASSIGNED:
      return true;
    case U_NON_SPACING_MARK:
      return c >= 0xFE00 && c <= 0xFE0F;  // emoji variation selectors
    default:
      return false;
  }
}

}  // namespace

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false, field_started = false;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_row();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) fail(ErrorKind::format, "csv: unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return rows;
}

QAPair parse_qa_cell(std::string_view cell, std::size_t row) {
  static const std::regex pattern(R"(^\s*##\s*Question\s*:\s*([\s\S]*?)\s*##\s*Answer\s*:\s*([\s\S]*?)\s*$)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(cell.begin(), cell.end(), m, pattern)) {
    fail(ErrorKind::format, "row " + std::to_string(row) + ": malformed QA_text cell starting with '" +
                                std::string(cell.substr(0, 24)) + "'");
  }
  return QAPair{trim(m[1].str()), trim(m[2].str()), row};
}

std::vector<QAPair> parse_qa_csv(std::string_view text, Warnings* warnings) {
  if (text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  const auto rows = parse_csv(text);
  if (rows.empty()) fail(ErrorKind::format, "qa csv: missing header row");
  const auto& header = rows[0];
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (lower_ascii(trim(header[i])) == lower_ascii(name)) return i;
    return std::nullopt;
  };
  const auto fused = column("QA_text");
  const auto qcol = column("question");
  const auto acol = column("answer");
  if (!fused && !(qcol && acol)) {
    std::string cols;
    for (const auto& h : header) cols += (cols.empty() ? "" : ", ") + h;
    fail(ErrorKind::format, "qa csv: expected a QA_text column or question/answer columns; found [" + cols + "]");
  }
  std::vector<QAPair> pairs;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    auto cell = [&](std::size_t c) -> std::string_view {
      if (c >= cells.size()) {
        fail(ErrorKind::format, "row " + std::to_string(r) + ": missing column " + std::to_string(c + 1));
      }
      return cells[c];
    };
    if (fused) {
      pairs.push_back(parse_qa_cell(cell(*fused), r));
    } else {
      pairs.push_back(QAPair{trim(cell(*qcol)), trim(cell(*acol)), r});
    }
  }
  if (pairs.empty() && warnings) warnings->push_back("qa csv: no data rows after header");
  return pairs;
}

std::vector<QAPair> load_qa_csv(const std::filesystem::path& path, Warnings* warnings) {
  return parse_qa_csv(read_file(path), warnings);
}

std::optional<std::size_t> find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > s.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
    if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
    i += len;
  }
  return std::nullopt;
}

std::string normalize_text(std::string_view s, TextProfile profile) {
  if (auto bad = find_invalid_utf8(s)) {
    fail(ErrorKind::encoding, "normalize_text: invalid UTF-8 at byte offset " + std::to_string(*bad));
  }
  const icu::UnicodeString input = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
  // Filtering happens before composition so that removing a character can
  // never leave a newly composable pair behind.
  icu::UnicodeString filtered;
  for (int32_t i = 0; i < input.length();) {
    const UChar32 c = input.char32At(i);
    i += U16_LENGTH(c);
    if (c != '\n' && c != '\t' && u_charType(c) == U_CONTROL_CHAR) continue;
    if (profile == TextProfile::analysis && strip_under_analysis(c)) continue;
    filtered.append(c);
  }
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorKind::encoding, "normalize_text: NFC normalizer unavailable");
  const icu::UnicodeString composed = nfc->normalize(filtered, status);
  if (U_FAILURE(status)) fail(ErrorKind::encoding, "normalize_text: NFC normalization failed");

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (is_space_tab(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar32>(' '));
    pending_space = false;
    collapsed.append(c);
  }
  std::string out;
  collapsed.toUTF8String(out);
  return trim(out);
}

std::string remove_stopwords(std::string_view s, const std::set<std::string>& stopwords) {
  std::set<std::string> lowered;
  for (const auto& w : stopwords) lowered.insert(lower_ascii(w));
  std::istringstream in{std::string(s)};
  std::string word, out;
  while (in >> word) {
    if (lowered.count(lower_ascii(word))) continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

struct Redactor::Impl {
  std::vector<std::regex> patterns;
};

Redactor::Redactor(const std::vector<std::string>& patterns) : impl_(std::make_unique<Impl>()) {
  for (const auto& p : patterns) {
    try {
      impl_->patterns.emplace_back(p, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      fail(ErrorKind::config, "redact: invalid pattern '" + p + "': " + e.what());
    }
  }
}

Redactor::~Redactor() = default;
Redactor::Redactor(Redactor&&) noexcept = default;
Redactor& Redactor::operator=(Redactor&&) noexcept = default;

std::string Redactor::apply(std::string_view s) const {
  std::string out;
  std::size_t pos = 0;
  const auto begin = s.begin();
  while (pos <= s.size()) {
    std::size_t best_start = std::string_view::npos, best_len = 0;
    for (const auto& re : impl_->patterns) {
      std::match_results<std::string_view::const_iterator> m;
      auto flags = std::regex_constants::match_not_null;
      if (pos > 0) flags |= std::regex_constants::match_prev_avail;
      if (!std::regex_search(begin + static_cast<std::ptrdiff_t>(pos), s.end(), m, re, flags)) continue;
      const std::size_t start = pos + static_cast<std::size_t>(m.position(0));
      const std::size_t len = static_cast<std::size_t>(m.length(0));
      if (start < best_start || (start == best_start && len > best_len)) {
        best_start = start;
        best_len = len;
      }
    }
    if (best_start == std::string_view::npos) break;
    out.append(s.substr(pos, best_start - pos));
    out.append(kRedacted);
    pos = best_start + best_len;
  }
  if (pos < s.size()) out.append(s.substr(pos));
  return out;
}

std::string redact(std::string_view s, const std::vector<std::string>& patterns) {
  return Redactor(patterns).apply(s);
}

std::string augment_shuffle(std::string_view text, Rng& rng, double p) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::config, "augment_shuffle: p must be in [0, 1]");
  if (p == 0.0) return std::string(text);
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    // Sentence = leading whitespace, body, terminator run.
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    out.append(text.substr(i, j - i));
    std::size_t k = j;
    while (k < text.size() && text[k] != '.' && text[k] != '?' && text[k] != '!') ++k;
    std::size_t end = k;
    while (end < text.size() && (text[end] == '.' || text[end] == '?' || text[end] == '!')) ++end;
    std::string_view body = text.substr(j, k - j);
    std::size_t body_end = body.find_last_not_of(" \t\r\n");
    std::string_view trailing_ws;
    if (body_end != std::string_view::npos) {
      trailing_ws = body.substr(body_end + 1);
      body = body.substr(0, body_end + 1);
    }
    std::vector<std::string> words;
    std::istringstream in{std::string(body)};
    for (std::string w; in >> w;) words.push_back(w);
    if (words.size() > 1 && rng.uniform() < p) {
      for (std::size_t n = words.size() - 1; n > 0; --n) std::swap(words[n], words[rng.uniform_index(n + 1)]);
      for (std::size_t w = 0; w < words.size(); ++w) {
        if (w) out += ' ';
        out += words[w];
      }
    } else {
      out.append(body);
    }
    out.append(trailing_ws);
    out.append(text.substr(k, end - k));
    i = end;
  }
  return out;
}

std::string preprocess(std::string_view s, const PreprocessConfig& config, Rng* rng) {
  std::string out(s);
  if (config.normalize) out = normalize_text(out, config.profile);
  if (!config.redact_patterns.empty()) out = redact(out, config.redact_patterns);
  if (config.profile == TextProfile::analysis && config.stopwords) out = remove_stopwords(out, *config.stopwords);
  if (config.augment_shuffle) {
    if (!rng) fail(ErrorKind::contract, "preprocess: word shuffle needs an rng");
    out = augment_shuffle(out, *rng, config.augment_p);
  }
  return out;
}

}  // namespace pft

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "pft/corpus.hpp"
#include "pft/error.hpp"
#include "pft/hash.hpp"

namespace pft {
namespace {

using json = nlohmann::json;
constexpr int kTokenizerVersion = 1;

enum class CharClass { space, letter, digit, other };

CharClass classify(unsigned char c) {
  if (std::isspace(c)) return CharClass::space;
  if (c >= 0x80 || std::isalpha(c)) return CharClass::letter;
  if (std::isdigit(c)) return CharClass::digit;
  return CharClass::other;
}

std::string to_hex(std::string_view bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::string from_hex(std::string_view hex) {
  auto nibble = [&](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    fail(ErrorKind::format, "tokenizer: invalid hex digit in vocab entry");
  };
  if (hex.size() % 2) fail(ErrorKind::format, "tokenizer: odd-length hex vocab entry");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out += static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1]));
  return out;
}

/// Leftmost-longest occurrence of any term at or after `from`.
std::pair<std::size_t, std::size_t> find_term(std::string_view text, std::size_t from,
                                              const std::vector<std::string>& terms) {
  for (std::size_t i = from; i < text.size(); ++i) {
    std::size_t best = 0;
    for (const auto& t : terms)
      if (t.size() > best && text.compare(i, t.size(), t) == 0) best = t.size();
    if (best) return {i, best};
  }
  return {std::string_view::npos, 0};
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const std::size_t start = i;
    const auto c = static_cast<unsigned char>(text[i]);
    if (c == ' ' && i + 1 < n && classify(static_cast<unsigned char>(text[i + 1])) != CharClass::space) ++i;
    const CharClass cls = classify(static_cast<unsigned char>(text[i]));
    if (cls == CharClass::space) {
      // A trailing space that precedes a word stays with that word.
      while (i < n && classify(static_cast<unsigned char>(text[i])) == CharClass::space) {
        if (i > start && text[i] == ' ' && i + 1 < n &&
            classify(static_cast<unsigned char>(text[i + 1])) != CharClass::space)
          break;
        ++i;
      }
    } else {
      while (i < n && classify(static_cast<unsigned char>(text[i])) == cls) ++i;
    }
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

Tokenizer::Tokenizer() {
  vocab_.reserve(kFirstLearned);
  for (int b = 0; b < 256; ++b) vocab_.emplace_back(1, static_cast<char>(b));
  vocab_.emplace_back();  // BOS
  vocab_.emplace_back();  // EOS
  vocab_.emplace_back();  // PAD
}

void Tokenizer::add_domain_term(const std::string& term) {
  if (term.empty()) fail(ErrorKind::config, "tokenizer: empty domain term");
  if (find_invalid_utf8(term)) fail(ErrorKind::encoding, "tokenizer: domain term is not valid UTF-8");
  if (term_ids_.count(term)) fail(ErrorKind::config, "tokenizer: duplicate domain term '" + term + "'");
  const auto id = static_cast<std::int32_t>(vocab_.size());
  vocab_.push_back(term);
  domain_terms_.push_back(term);
  term_ids_.emplace(term, id);
}

void Tokenizer::rebuild_index() {
  merge_rank_.clear();
  term_ids_.clear();
  std::int32_t next = kFirstLearned;
  for (const auto& t : domain_terms_) term_ids_.emplace(t, next++);
  for (std::size_t r = 0; r < merges_.size(); ++r) merge_rank_[merges_[r]] = {r, next++};
}

std::vector<std::int32_t> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<std::int32_t> ids;
  ids.reserve(chunk.size());
  for (unsigned char c : chunk) ids.push_back(c);
  while (ids.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::int32_t best_id = -1;
    std::pair<std::int32_t, std::int32_t> best_pair;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = merge_rank_.find({ids[i], ids[i + 1]});
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_id = it->second.second;
        best_pair = it->first;
      }
    }
    if (best_id < 0) break;
    std::vector<std::int32_t> next;
    next.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i + 1 < ids.size() && ids[i] == best_pair.first && ids[i + 1] == best_pair.second) {
        next.push_back(best_id);
        ++i;
      } else {
        next.push_back(ids[i]);
      }
    }
    ids = std::move(next);
  }
  return ids;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> out;
  auto encode_plain = [&](std::string_view seg) {
    for (auto piece : pretokenize(seg)) {
      auto ids = encode_chunk(piece);
      out.insert(out.end(), ids.begin(), ids.end());
    }
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto [at, len] = find_term(text, pos, domain_terms_);
    if (at == std::string_view::npos) {
      encode_plain(text.substr(pos));
      break;
    }
    encode_plain(text.substr(pos, at - pos));
    out.push_back(term_ids_.find(text.substr(at, len))->second);
    pos = at + len;
  }
  return out;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
      fail(ErrorKind::input, "tokenizer: id " + std::to_string(id) + " outside vocabulary of " +
                                 std::to_string(vocab_.size()));
    }
    out += vocab_[static_cast<std::size_t>(id)];
  }
  return out;
}

Tokenizer train_bpe(const std::vector<std::string>& corpus, std::size_t target_vocab,
                    const std::vector<std::string>& domain_terms) {
  Tokenizer tok;
  for (const auto& t : domain_terms) tok.add_domain_term(t);
  if (target_vocab < tok.vocab_.size()) {
    fail(ErrorKind::config, "train_bpe: target vocabulary " + std::to_string(target_vocab) + " is below the " +
                                std::to_string(tok.vocab_.size()) + " reserved byte, special and domain tokens");
  }

  std::map<std::string, std::int64_t> word_counts;
  for (const auto& doc : corpus) {
    std::size_t pos = 0;
    while (pos < doc.size()) {
      const auto [at, len] = find_term(doc, pos, tok.domain_terms_);
      const std::string_view seg = std::string_view(doc).substr(pos, at == std::string_view::npos ? doc.size() - pos : at - pos);
      for (auto piece : pretokenize(seg)) ++word_counts[std::string(piece)];
      if (at == std::string_view::npos) break;
      pos = at + len;
    }
  }
  std::vector<std::pair<std::vector<std::int32_t>, std::int64_t>> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) {
    std::vector<std::int32_t> ids;
    for (unsigned char c : w) ids.push_back(c);
    words.emplace_back(std::move(ids), n);
  }

  while (tok.vocab_.size() < target_vocab) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> pair_counts;
    for (const auto& [ids, n] : words)
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[{ids[i], ids[i + 1]}] += n;
    if (pair_counts.empty()) break;
    auto best = pair_counts.begin();
    for (auto it = std::next(best); it != pair_counts.end(); ++it) {
      if (it->second > best->second) {
        best = it;
      } else if (it->second == best->second) {
        const auto& a = it->first;
        const auto& b = best->first;
        const int left = tok.vocab_[a.first].compare(tok.vocab_[b.first]);
        if (left < 0 || (left == 0 && tok.vocab_[a.second] < tok.vocab_[b.second])) best = it;
      }
    }
    const auto pair = best->first;
    const auto id = static_cast<std::int32_t>(tok.vocab_.size());
    tok.vocab_.push_back(tok.vocab_[pair.first] + tok.vocab_[pair.second]);
    tok.merges_.push_back(pair);
    for (auto& [ids, n] : words) {
      std::vector<std::int32_t> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == pair.first && ids[i + 1] == pair.second) {
          next.push_back(id);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  }
  tok.rebuild_index();
  return tok;
}

std::string Tokenizer::to_json() const {
  json vocab = json::array();
  for (const auto& v : vocab_) vocab.push_back(to_hex(v));
  json merges = json::array();
  for (const auto& [l, r] : merges_) merges.push_back({l, r});
  json doc = {{"version", kTokenizerVersion},
              {"kind", "byte_fallback_bpe"},
              {"specials", {{"bos", kBos}, {"eos", kEos}, {"pad", kPad}}},
              {"vocab", vocab},
              {"merges", merges},
              {"domain_terms", domain_terms_}};
  return doc.dump(1);
}

Tokenizer Tokenizer::from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("tokenizer: ") + e.what());
  }
  auto field = [&](const char* name) -> const json& {
    if (!doc.is_object() || !doc.contains(name)) fail(ErrorKind::format, std::string("tokenizer: missing field ") + name);
    return doc[name];
  };
  try {
    if (field("version").get<int>() != kTokenizerVersion) {
      fail(ErrorKind::version, "tokenizer: unsupported version " + field("version").dump());
    }
    if (field("kind").get<std::string>() != "byte_fallback_bpe") fail(ErrorKind::format, "tokenizer: unknown kind");
    const auto& sp = field("specials");
    if (sp.at("bos").get<int>() != kBos || sp.at("eos").get<int>() != kEos || sp.at("pad").get<int>() != kPad) {
      fail(ErrorKind::format, "tokenizer: special ids differ from 256/257/258");
    }
    Tokenizer tok;
    for (const auto& t : field("domain_terms")) tok.add_domain_term(t.get<std::string>());
    for (const auto& m : field("merges")) {
      const auto l = m.at(0).get<std::int32_t>(), r = m.at(1).get<std::int32_t>();
      const auto n = static_cast<std::int32_t>(tok.vocab_.size());
      if (l < 0 || r < 0 || l >= n || r >= n || (l >= kBos && l < kFirstLearned) || (r >= kBos && r < kFirstLearned)) {
        fail(ErrorKind::format, "tokenizer: merge refers to an invalid id");
      }
      tok.vocab_.push_back(tok.vocab_[static_cast<std::size_t>(l)] + tok.vocab_[static_cast<std::size_t>(r)]);
      tok.merges_.emplace_back(l, r);
    }
    const auto& vocab = field("vocab");
    if (vocab.size() != tok.vocab_.size()) fail(ErrorKind::format, "tokenizer: vocab size disagrees with merges");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      if (from_hex(vocab[i].get<std::string>()) != tok.vocab_[i]) {
        fail(ErrorKind::format, "tokenizer: vocab entry " + std::to_string(i) + " disagrees with merges");
      }
    }
    tok.rebuild_index();
    return tok;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("tokenizer: ") + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << to_json() << '\n';
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::uint64_t Tokenizer::fingerprint() const { return fnv1a64(to_json()); }

}  // namespace pft

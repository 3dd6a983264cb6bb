// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <map>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pft/corpus.hpp"
#include "pft/error.hpp"
#include "pft/rng.hpp"
#include "support.hpp"

using namespace pft;

using pft::test::kind_of;

namespace {

/// Leftmost-longest replacement by trying every substring against every pattern.
std::string brute_force_redact(const std::string& s, const std::vector<std::string>& patterns) {
  std::vector<std::regex> res;
  for (const auto& p : patterns) res.emplace_back(p);
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t best = 0;
    for (std::size_t j = s.size(); j > i && best == 0; --j)
      for (const auto& re : res)
        if (std::regex_match(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(j), re)) best = j - i;
    if (best) {
      out += kRedacted;
      i += best;
    } else {
      out += s[i++];
    }
  }
  return out;
}

std::vector<std::multiset<std::string>> sentence_words(const std::string& text) {
  std::vector<std::multiset<std::string>> out(1);
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.back().insert(word);
    word.clear();
  };
  for (char c : text) {
    if (c == ' ') {
      flush();
    } else if (c == '.' || c == '?' || c == '!') {
      flush();
      out.emplace_back();
    } else {
      word += c;
    }
  }
  flush();
  return out;
}

std::string random_utf8(Rng& rng) {
  static const std::vector<std::string> pieces{"a", "Z", " ", "\n", "é", "ß", "€", "📈", "주식", "0", "$", "P/E", "  ", "\t"};
  std::string s;
  const auto n = rng.uniform_index(12);
  for (std::uint64_t i = 0; i < n; ++i) s += pieces[rng.uniform_index(pieces.size())];
  return s;
}

}  // namespace

TEST_CASE("csv parser handles quotes, embedded separators and CRLF") {
  const auto rows = parse_csv("a,b\r\n\"x, y\",\"he said \"\"hi\"\"\"\r\n\"multi\nline\",z\n");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][0] == "x, y");
  CHECK(rows[1][1] == "he said \"hi\"");
  CHECK(rows[2][0] == "multi\nline");
  CHECK(kind_of([] { parse_csv("\"open"); }) == ErrorKind::format);
}

TEST_CASE("fused QA cells split on flexible markers") {
  const auto p = parse_qa_cell(
      "##Question: What is an Index?## Answer: An Index measures the performance of a group of stocks serving as a "
      "benchmark.",
      1);
  CHECK(p.question == "What is an Index?");
  CHECK(p.answer == "An Index measures the performance of a group of stocks serving as a benchmark.");
  const auto q = parse_qa_cell("  ## Question :  q1 ##Answer:a1  ", 2);
  CHECK(q.question == "q1");
  CHECK(q.answer == "a1");
  try {
    parse_qa_cell("Question without markers", 7);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    CHECK(std::string(e.what()).find("row 7") != std::string::npos);
    CHECK(std::string(e.what()).find("Question without") != std::string::npos);
  }
}

TEST_CASE("qa csv accepts fused or split columns and preserves order") {
  const auto fused = parse_qa_csv("QA_text\n\"##Question: q1## Answer: a1\"\n\"##Question: q2## Answer: a2\"\n");
  REQUIRE(fused.size() == 2);
  CHECK(fused[0].question == "q1");
  CHECK(fused[1].answer == "a2");
  CHECK(fused[1].row == 2);
  const auto split = parse_qa_csv("\xEF\xBB\xBFQuestion,Answer\nq,a\n");
  REQUIRE(split.size() == 1);
  CHECK(split[0].answer == "a");
  Warnings w;
  CHECK(parse_qa_csv("QA_text\n", &w).empty());
  CHECK(w.size() == 1);
  try {
    parse_qa_csv("text,label\nx,y\n");
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    CHECK(std::string(e.what()).find("text, label") != std::string::npos);
  }
}

TEST_CASE("bundled QA corpus holds at least 135 rows and the index example") {
  const auto pairs = load_qa_csv(PFT_SOURCE_DIR "/data/finance_qa.csv");
  CHECK(pairs.size() >= 135);
  CHECK(std::any_of(pairs.begin(), pairs.end(), [](const QAPair& p) { return p.question == "What is an Index?"; }));
}

TEST_CASE("normalize_text collapses spaces, applies NFC and drops controls") {
  CHECK(normalize_text("  a \t b  ") == "a b");
  CHECK(normalize_text("e\xCC\x81") == "\xC3\xA9");
  CHECK(normalize_text("a\x01" "b\nc") == "ab\nc");
  CHECK(normalize_text("Stocks \xF0\x9F\x93\x88 up!") == "Stocks \xF0\x9F\x93\x88 up!");
  CHECK(normalize_text("Stocks \xF0\x9F\x93\x88 up!", TextProfile::analysis) == "Stocks up!");
  CHECK(normalize_text("x \xE2\x9D\xA4\xEF\xB8\x8F y", TextProfile::analysis) == "x y");
  try {
    normalize_text("ok\xC3(");
    FAIL("expected an encoding error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::encoding);
    CHECK(std::string(e.what()).find("offset 2") != std::string::npos);
  }
  CHECK(find_invalid_utf8("\xC0\xAF") == std::size_t{0});       // overlong
  CHECK(find_invalid_utf8("a\xED\xA0\x80") == std::size_t{1});  // surrogate
}

TEST_CASE("normalize_text is idempotent") {
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const auto s = random_utf8(rng);
    for (auto profile : {TextProfile::lm, TextProfile::analysis}) {
      const auto once = normalize_text(s, profile);
      CHECK(normalize_text(once, profile) == once);
    }
  }
}

TEST_CASE("stopwords are removed case-insensitively") {
  CHECK(remove_stopwords("The index and THE fund", {"the", "and"}) == "index fund");
  PreprocessConfig lm;
  lm.stopwords = std::set<std::string>{"the"};
  CHECK(preprocess("the fund", lm) == "the fund");
  lm.profile = TextProfile::analysis;
  CHECK(preprocess("the fund", lm) == "fund");
}

TEST_CASE("redaction replaces matches leftmost-longest") {
  const std::vector<std::string> email{R"([a-z]+@[a-z]+\.com)"};
  CHECK(redact("mail me at a@b.com", email) == "mail me at [REDACTED]");
  CHECK(redact("nothing here", email) == "nothing here");
  const std::vector<std::string> overlapping{R"(\d{3})", R"(\d{3}-\d{4})", R"([a-c]+\d)", R"(b\d{2})"};
  const std::string s = "ab123-4567 x b12 cab9 555-55 c1";
  REQUIRE(s.size() == 31);
  CHECK(redact(s, overlapping) == brute_force_redact(s, overlapping));
  CHECK(kind_of([] { redact("x", {"("}); }) == ErrorKind::config);
}

TEST_CASE("word shuffle keeps each sentence's word multiset") {
  const std::string text = "Stocks rose sharply today. Bonds fell? Gold held steady again!";
  Rng r0(1);
  CHECK(augment_shuffle(text, r0, 0.0) == text);
  Rng r1(1);
  CHECK(augment_shuffle("Solo.", r1, 1.0) == "Solo.");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto out = augment_shuffle(text, rng, 1.0);
    CHECK(sentence_words(out) == sentence_words(text));
  }
  Rng a(5), b(5);
  CHECK(augment_shuffle(text, a, 0.5) == augment_shuffle(text, b, 0.5));
  Rng c(0);
  CHECK(kind_of([&] { augment_shuffle(text, c, 1.5); }) == ErrorKind::config);
}

TEST_CASE("bpe training counts pairs and breaks ties by byte order") {
  const auto t1 = train_bpe({"aaaa"}, Tokenizer::kFirstLearned + 1);
  REQUIRE(t1.merges().size() == 1);
  CHECK(t1.merges()[0] == std::pair<std::int32_t, std::int32_t>{'a', 'a'});

  // Pairs: (a,b) x4, then (' ', ab) x2 beats (ab, c) x1.
  const auto t2 = train_bpe({"ab ab ab", "abc"}, Tokenizer::kFirstLearned + 2);
  REQUIRE(t2.merges().size() == 2);
  CHECK(t2.merges()[0] == std::pair<std::int32_t, std::int32_t>{'a', 'b'});
  CHECK(t2.merges()[1] == std::pair<std::int32_t, std::int32_t>{' ', Tokenizer::kFirstLearned});

  // All pairs tie at 1; ' ' (0x20) is the smallest left token.
  const auto t3 = train_bpe({"ab cd"}, Tokenizer::kFirstLearned + 1);
  CHECK(t3.merges()[0] == std::pair<std::int32_t, std::int32_t>{' ', 'c'});

  CHECK(kind_of([] { train_bpe({"x"}, 258); }) == ErrorKind::config);
  CHECK(kind_of([] { train_bpe({"x"}, 259, {"KOSPI"}); }) == ErrorKind::config);
}

TEST_CASE("domain terms are atomic and every string round-trips") {
  const auto tok = train_bpe({"the KOSPI index rose", "index funds track the index"}, 300, {"KOSPI", "P/E Ratio"});
  const auto ids = tok.encode("KOSPI index");
  REQUIRE(!ids.empty());
  CHECK(ids[0] == Tokenizer::kFirstLearned);
  CHECK(tok.decode(ids) == "KOSPI index");
  const auto pe = tok.encode("a P/E Ratio of 12");
  CHECK(std::count(pe.begin(), pe.end(), Tokenizer::kFirstLearned + 1) == 1);
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto s = random_utf8(rng);
    CHECK(tok.decode(tok.encode(s)) == s);
  }
  const std::vector<std::int32_t> bad{static_cast<std::int32_t>(tok.vocab_size())};
  CHECK(kind_of([&] { tok.decode(bad); }) == ErrorKind::input);
}

TEST_CASE("tokenizer json round-trips and rejects tampering") {
  const auto tok = train_bpe({"index funds track the index", "bonds pay coupons"}, 290, {"ETF"});
  const auto back = Tokenizer::from_json(tok.to_json());
  CHECK(back.vocab() == tok.vocab());
  CHECK(back.merges() == tok.merges());
  CHECK(back.fingerprint() == tok.fingerprint());
  auto dir = test::temp_dir("tok");
  tok.save(dir / "t.json");
  CHECK(Tokenizer::load(dir / "t.json").encode("the index ETF") == tok.encode("the index ETF"));
  auto doc = nlohmann::json::parse(tok.to_json());
  doc["version"] = 9;
  CHECK(kind_of([&] { Tokenizer::from_json(doc.dump()); }) == ErrorKind::version);
  doc["version"] = 1;
  doc["merges"][0][0] = 100000;
  CHECK(kind_of([&] { Tokenizer::from_json(doc.dump()); }) == ErrorKind::format);
  CHECK(kind_of([] { Tokenizer::from_json("{"); }) == ErrorKind::format);
}

TEST_CASE("templated examples mask the prompt and label answer plus EOS") {
  const auto tok = train_bpe({"Answer the following question truthfully. What is a bond? A loan."}, 300);
  CHECK(render_template(kDefaultTrainTemplate, "Q", "A") == "Answer the following question truthfully.\n: Q\n: A");
  const std::vector<QAPair> pairs{{"What is a bond?", "A bond is a loan.", 1}};
  BuildReport rep;
  const auto ex = build_examples(pairs, tok, kDefaultTrainTemplate, 256, true, &rep);
  REQUIRE(ex.size() == 1);
  const auto prompt = tok.encode(render_template(kDefaultInferenceTemplate, "What is a bond?", std::nullopt));
  const auto answer = tok.encode("A bond is a loan.");
  std::vector<std::int32_t> expect{Tokenizer::kBos};
  expect.insert(expect.end(), prompt.begin(), prompt.end());
  expect.insert(expect.end(), answer.begin(), answer.end());
  expect.push_back(Tokenizer::kEos);
  CHECK(ex[0].input_ids == expect);
  CHECK(ex[0].unmasked_count() == answer.size() + 1);
  for (std::size_t i = 0; i <= prompt.size(); ++i) CHECK(ex[0].labels[i] == -1);
  for (std::size_t i = prompt.size() + 1; i < expect.size(); ++i) CHECK(ex[0].labels[i] == expect[i]);

  const auto unmasked = build_examples(pairs, tok, kDefaultTrainTemplate, 256, false);
  CHECK(unmasked[0].unmasked_count() == expect.size() - 1);
}

TEST_CASE("examples are truncated on the right and degenerate rows rejected") {
  const auto tok = train_bpe({"abc"}, 260);
  const std::vector<QAPair> pairs{{"q", "a long answer that will not fit", 1}, {"q", "", 2}, {"", "a", 3}};
  BuildReport rep;
  const auto ex = build_examples(pairs, tok, "{question}:{answer}", 8, true, &rep);
  REQUIRE(ex.size() == 1);
  CHECK(ex[0].length() == 8);
  CHECK(ex[0].input_ids[1] == 'q');
  CHECK(rep.truncated == 1);
  CHECK(rep.rejected == 2);
  CHECK(rep.warnings.size() == 2);
  CHECK(rep.warnings[0].find("row 2") != std::string::npos);
  CHECK(kind_of([&] { build_examples(pairs, tok, "{answer}", 8, true); }) == ErrorKind::config);
  CHECK(kind_of([&] { build_examples(pairs, tok, "{question}", 8, true); }) == ErrorKind::config);
}

TEST_CASE("prompt longer than the context leaves no label and is rejected") {
  const auto tok = train_bpe({"abc"}, 260);
  BuildReport rep;
  const auto ex = build_examples({{"a very long question indeed", "x", 4}}, tok, "{question}{answer}", 6, true, &rep);
  CHECK(ex.empty());
  CHECK(rep.rejected == 1);
}

TEST_CASE("lm windows and dataset json round-trip") {
  const auto tok = train_bpe({"abc def"}, 262);
  const auto w = build_lm_windows({"abcdefabcdefabcdef"}, tok, 5);
  REQUIRE(!w.empty());
  for (const auto& e : w) {
    CHECK(e.length() <= 5);
    CHECK(e.labels[0] == -1);
    CHECK(std::equal(e.labels.begin() + 1, e.labels.end(), e.input_ids.begin() + 1));
  }
  CHECK(w.front().input_ids[0] == Tokenizer::kBos);
  CHECK(w.back().input_ids.back() == Tokenizer::kEos);
  std::size_t len = 0;
  const auto back = examples_from_json(examples_to_json(w, 5), &len);
  CHECK(len == 5);
  REQUIRE(back.size() == w.size());
  CHECK(back[1].input_ids == w[1].input_ids);
}

TEST_CASE("preprocess runs normalize, redact, then shuffle") {
  PreprocessConfig c;
  c.redact_patterns = {R"(\d{4}-\d{4})"};
  c.augment_shuffle = true;
  c.augment_p = 0.0;
  Rng rng(1);
  CHECK(preprocess("  card  1234-5678 ok ", c, &rng) == "card [REDACTED] ok");
  CHECK(kind_of([&] { preprocess("x", c, nullptr); }) == ErrorKind::contract);
}

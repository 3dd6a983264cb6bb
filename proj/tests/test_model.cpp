// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "pft/eval.hpp"
#include "pft/model.hpp"
#include "pft/peft.hpp"
#include "pft/rng.hpp"
#include "reference_lm.hpp"
#include "support.hpp"

using namespace pft;
using pft::test::kind_of;

namespace {

CausalLMConfig micro_config() {
  CausalLMConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.seq_len = 6;
  return c;
}

std::size_t numel_sum(const CausalLM& m) {
  std::size_t n = 0;
  for (const Parameter* p : m.parameters()) n += p->value().size();
  return n;
}

std::vector<float> logits_of(const CausalLM& m, std::span<const std::int32_t> ids, std::size_t batch = 1) {
  NoGradGuard ng;
  ForwardContext ctx;
  const Var out = m.forward(ids, batch, ids.size() / batch, ctx);
  const auto v = out.value().data();
  return {v.begin(), v.end()};
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("parameter count matches the closed form and the tensors") {
  const CausalLMConfig defaults;
  const std::size_t V = 512, T = 128, d = 64, L = 2, m = 4;
  CHECK(defaults.parameter_count() == V * d + T * d + L * ((4 + 2 * m) * d * d + (9 + m) * d) + 2 * d);
  CHECK(defaults.parameter_count() == 141056);
  CHECK(numel_sum(CausalLM(defaults)) == 141056);
  for (const auto& c : {pft::test::tiny_config(), micro_config()}) CHECK(numel_sum(CausalLM(c)) == c.parameter_count());
  CHECK(micro_config().parameter_count() <= 5000);
}

TEST_CASE("config validation") {
  auto c = micro_config();
  c.n_heads = 3;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = micro_config();
  c.vocab_size = 0;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
}

TEST_CASE("zero model is uniform: loss log V and perplexity V") {
  const auto c = pft::test::tiny_config();
  CausalLM zero(c);
  Rng rng(3);
  const auto data = pft::test::random_dataset(9, 5, c);
  ForwardContext ctx;
  const float loss = lm_loss(zero, data[0], ctx).value()[0];
  CHECK(loss == doctest::Approx(std::log(static_cast<double>(c.vocab_size))).epsilon(1e-6));
  CHECK(perplexity(zero, data) == doctest::Approx(static_cast<double>(c.vocab_size)).epsilon(1e-5));
}

TEST_CASE("init statistics") {
  Rng rng(1);
  const auto m = init_model(CausalLMConfig{}, rng);
  const auto w = m.blocks()[0].dense_h_to_4h.weight.value().data();
  double s = 0, s2 = 0;
  for (float v : w) {
    s += v;
    s2 += double(v) * v;
  }
  const double mean = s / w.size(), sd = std::sqrt(s2 / w.size() - mean * mean);
  CHECK(std::abs(mean) < 1e-3);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.02));
  for (float v : m.blocks()[0].ln_attn.gain.value().data()) CHECK(v == 1.0f);
  for (float v : m.blocks()[0].dense.bias.value().data()) CHECK(v == 0.0f);
}

TEST_CASE("forward matches the double-precision reference") {
  const auto c = pft::test::tiny_config();
  Rng rng(5);
  CausalLM m(c);
  pft::test::randomize(m, rng, 0.3f);
  const auto ids = pft::test::random_ids(rng, c.seq_len, c.vocab_size);
  const auto got = logits_of(m, ids);
  const auto ref = pft::test::RefModel::from(m).logits(ids);
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
  CHECK(worst < 1e-5);
}

TEST_CASE("causality: a token never influences earlier positions") {
  const auto c = pft::test::tiny_config();
  Rng rng(7);
  const auto m = init_model(c, rng);
  auto ids = pft::test::random_ids(rng, c.seq_len, c.vocab_size);
  const auto before = logits_of(m, ids);
  for (std::size_t k = 0; k < c.seq_len; ++k) {
    auto changed = ids;
    changed[k] = (changed[k] + 1) % static_cast<std::int32_t>(c.vocab_size);
    const auto after = logits_of(m, changed);
    const std::size_t prefix = k * c.vocab_size;
    CHECK(bitwise_equal(std::span(before).first(prefix), std::span(after).first(prefix)));
    CHECK_FALSE(bitwise_equal(std::span(before).subspan(prefix), std::span(after).subspan(prefix)));
  }
}

TEST_CASE("batched forward equals per-sequence forward bitwise") {
  const auto c = pft::test::tiny_config();
  Rng rng(8);
  const auto m = init_model(c, rng);
  const auto a = pft::test::random_ids(rng, 7, c.vocab_size);
  const auto b = pft::test::random_ids(rng, 7, c.vocab_size);
  std::vector<std::int32_t> both(a);
  both.insert(both.end(), b.begin(), b.end());
  const auto joint = logits_of(m, both, 2);
  auto sa = logits_of(m, a), sb = logits_of(m, b);
  sa.insert(sa.end(), sb.begin(), sb.end());
  CHECK(bitwise_equal(joint, sa));
}

TEST_CASE("forward rejects bad lengths") {
  const auto c = pft::test::tiny_config();
  CausalLM m(c);
  ForwardContext ctx;
  std::vector<std::int32_t> ids(c.seq_len + 1, 0);
  CHECK(kind_of([&] { m.forward(ids, 1, ids.size(), ctx); }) == ErrorKind::input);
  CHECK(kind_of([&] { m.forward(std::span(ids).first(5), 2, 3, ctx); }) == ErrorKind::dimension);
  std::vector<std::int32_t> oob{0, static_cast<std::int32_t>(c.vocab_size)};
  CHECK(kind_of([&] { m.forward(oob, 1, 2, ctx); }) == ErrorKind::input);
}

TEST_CASE("greedy decoding breaks ties toward the lowest id") {
  const auto c = pft::test::tiny_config();
  CausalLM zero(c);
  GenerationConfig g;
  g.max_new_tokens = 4;
  const std::vector<std::int32_t> prompt{5, 7};
  const auto out = generate(zero, prompt, g, nullptr);
  CHECK(out == std::vector<std::int32_t>{5, 7, 0, 0, 0, 0});
  g.eos_id = 0;
  CHECK(generate(zero, prompt, g, nullptr).size() == 3);
  CHECK(kind_of([&] { generate(zero, {}, g, nullptr); }) == ErrorKind::input);
}

TEST_CASE("sampling is seeded and top_k 1 equals greedy") {
  const auto c = pft::test::tiny_config();
  Rng init(11);
  const auto m = init_model(c, init);
  const std::vector<std::int32_t> prompt{1, 2, 3};
  GenerationConfig greedy;
  greedy.max_new_tokens = 20;
  GenerationConfig s = greedy;
  s.sample = true;
  s.temperature = 0.7f;
  Rng r1(4), r2(4);
  CHECK(generate(m, prompt, s, &r1) == generate(m, prompt, s, &r2));
  s.top_k = 1;
  Rng r3(9);
  CHECK(generate(m, prompt, s, &r3) == generate(m, prompt, greedy, nullptr));
  s.temperature = 0.0f;
  CHECK(kind_of([&] { generate(m, prompt, s, &r3); }) == ErrorKind::config);
}

TEST_CASE("generation slides the window past the context length") {
  const auto c = pft::test::tiny_config();
  Rng init(12);
  const auto m = init_model(c, init);
  GenerationConfig g;
  g.max_new_tokens = 3 * c.seq_len;
  CHECK(generate(m, std::vector<std::int32_t>{1}, g, nullptr).size() == 1 + 3 * c.seq_len);
}

TEST_CASE("clone shares no mutable tensors") {
  const auto c = pft::test::tiny_config();
  Rng rng(13);
  auto m = init_model(c, rng);
  auto copy = m.clone();
  copy.token_embedding().mutable_value()[0] += 1.0f;
  CHECK(m.token_embedding().value()[0] != copy.token_embedding().value()[0]);
}

TEST_CASE("gradcheck: full model against central differences") {
  const auto c = micro_config();
  Rng rng(21);
  CausalLM m(c);
  pft::test::randomize(m, rng, 0.3f);
  std::vector<std::int32_t> ids = pft::test::random_ids(rng, 2 * c.seq_len, c.vocab_size);
  std::vector<std::int32_t> labels = ids;
  labels[3] = ops::kIgnoreIndex;
  const auto r = pft::test::gradcheck(m, ids, labels, 2, 1e-3, 1e-4);
  INFO("worst at " << r.worst);
  CHECK(r.checked == c.parameter_count());
  CHECK(r.max_rel_error < 1e-3);
}

TEST_CASE("gradcheck: LoRA and bottleneck adapter parameters") {
  const auto c = micro_config();
  Rng rng(22);
  CausalLM m(c);
  pft::test::randomize(m, rng, 0.3f);
  LoraConfig lc;
  lc.r = 2;
  lc.alpha = 4;
  lc.dropout = 0.0f;
  attach_lora(m, lc, rng);
  attach_bottleneck(m, BottleneckAdapterConfig{4, "gelu"}, rng);
  for (Parameter* p : m.parameters())
    if (p->trainable) p->mutable_value() = gaussian_sample(rng, 0.0f, 0.3f, p->value().shape());
  const auto ids = pft::test::random_ids(rng, c.seq_len, c.vocab_size);
  const auto r = pft::test::gradcheck(m, ids, ids, 1, 1e-3, 1e-4);
  INFO("worst at " << r.worst);
  CHECK(r.checked == trainable_summary(m).trainable);
  CHECK(r.max_rel_error < 1e-3);
}

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "json.hpp"
#include "pft/peft.hpp"
#include "pft/store.hpp"
#include "pft/trainer.hpp"
#include "support.hpp"

using namespace pft;
using pft::test::kind_of;

namespace {

bool within_ulp(float a, float b) {
  return a == b || std::nextafter(b, INFINITY) == a || std::nextafter(b, -INFINITY) == a;
}

std::vector<std::uint8_t> weights_of(const CausalLM& m) { return serialize_archive(model_to_archive(m)); }

/// Tiny base with a LoRA adapter, as a fine-tuning run would start.
CausalLM lora_model(std::uint64_t seed) {
  Rng rng(seed);
  auto m = init_model(pft::test::tiny_config(), rng);
  LoraConfig lc;
  lc.r = 4;
  attach_lora(m, lc, rng);
  return m;
}

TrainConfig quick_config(const std::filesystem::path& dir) {
  TrainConfig c;
  c.output_dir = dir;
  c.learning_rate = 1e-2f;
  return c;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("scheduler: warmup then cosine to zero under the default hyperparameters") {
  const TrainConfig c;
  CHECK(warmup_steps(c, 60) == 2);
  CHECK(lr_at_step(c, 0) == 1e-4f);
  CHECK(lr_at_step(c, 1) == 2e-4f);
  CHECK(lr_at_step(c, 60) == 0.0f);
  for (std::size_t s = 0; s <= 60; ++s) {
    const long double lr = 2e-4L;
    const long double expected =
        s < 2 ? lr * (s + 1) / 2.0L : lr * 0.5L * (1.0L + std::cos(std::numbers::pi_v<long double> * (s - 2) / 58.0L));
    INFO("step " << s);
    CHECK(within_ulp(lr_at_step(c, s), static_cast<float>(expected)));
  }
  TrainConfig k = c;
  k.lr_scheduler_type = SchedulerKind::constant;
  CHECK(lr_at_step(k, 30) == 2e-4f);
  k.warmup_ratio = 0.0f;
  CHECK(lr_at_step(k, 0) == 2e-4f);
}

TEST_CASE("epochs override max_steps") {
  TrainConfig c;
  CHECK(c.total_steps(165) == 60);
  c.epochs = 10;
  CHECK(c.total_steps(165) == 10 * 42);
  CHECK(c.total_steps(1) == 10);
}

TEST_CASE("config and option parsing errors") {
  TrainConfig c;
  c.max_grad_norm = 0.0f;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  c = TrainConfig{};
  c.save_strategy = "epoch";
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::config);
  CHECK(optim_from_string("paged_adamw_32bit") == OptimKind::paged_adamw_32bit);
  CHECK(kind_of([] { optim_from_string("sgd"); }) == ErrorKind::config);
  CHECK(kind_of([] { scheduler_from_string("linear"); }) == ErrorKind::config);
  auto m = lora_model(1);
  TrainOptions no_files;
  no_files.write_files = false;
  CHECK(kind_of([&] { train_loop(m, {}, TrainConfig{}, no_files); }) == ErrorKind::data);
  CausalLM frozen(pft::test::tiny_config());
  frozen.set_all_trainable(false);
  CHECK(kind_of([&] { train_loop(frozen, pft::test::random_dataset(1, 4, frozen.config()), TrainConfig{}, no_files); }) ==
        ErrorKind::config);
}

TEST_CASE("batches are per-epoch permutations") {
  DataCursor cursor;
  Rng rng(3);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7; ++i)
    for (auto j : next_batch(cursor, rng, 7, 1)) ++seen[j];
  for (int s : seen) CHECK(s == 1);
  CHECK(cursor.epoch == 0);
  next_batch(cursor, rng, 7, 3);
  CHECK(cursor.epoch == 1);
  CHECK(cursor.offset == 3);
}

TEST_CASE("micro-batching and accumulation give the same update") {
  const auto data = pft::test::random_dataset(5, 12, pft::test::tiny_config());
  TrainOptions opts;
  opts.write_files = false;
  auto a = lora_model(2), b = lora_model(2);
  TrainConfig ca = quick_config("unused");
  ca.optim = OptimKind::adamw_32bit;
  ca.max_steps = 5;
  ca.per_device_train_batch_size = 4;
  ca.gradient_accumulation_steps = 1;
  TrainConfig cb = ca;
  cb.per_device_train_batch_size = 1;
  cb.gradient_accumulation_steps = 4;
  train_loop(a, data, ca, opts);
  train_loop(b, data, cb, opts);
  CHECK(weights_of(a) == weights_of(b));
}

TEST_CASE("default run: metrics cadence, checkpoints, frozen base, loss trend") {
  const auto dir = pft::test::temp_dir("trainer_default");
  Rng rng(4);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 3; ++i) data.push_back(pft::test::random_example(rng, 10, 24));
  auto m = lora_model(4);
  std::vector<std::pair<std::string, Tensor>> frozen;
  for (const Parameter* p : m.parameters())
    if (!p->trainable) frozen.emplace_back(p->name, p->value());
  const auto before = weights_of(m);

  const auto r = train_loop(m, data, quick_config(dir));
  REQUIRE(r.records.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(r.records[i].step == static_cast<std::int64_t>(10 * (i + 1)));
  CHECK(r.records.back().training_loss < r.records.front().training_loss);
  CHECK(r.records.back().learning_rate == lr_at_step(quick_config(dir), 59));
  CHECK(r.checkpoints.size() == 6);
  for (int s = 10; s <= 60; s += 10) CHECK(std::filesystem::exists(dir / ("checkpoint-" + std::to_string(s)) / "model.pfwa"));
  const auto lines = lines_of(dir / "metrics.jsonl");
  REQUIRE(lines.size() == 6);
  const auto first = nlohmann::json::parse(lines[0]);
  for (const char* key : {"step", "training_loss", "learning_rate", "wall_ms", "epoch"}) CHECK(first.contains(key));

  for (const auto& [name, snap] : frozen) CHECK(m.find_parameter(name)->value().bitwise_equal(snap));
  CHECK(weights_of(m) != before);
  CHECK(trainable_summary(m).trainable == 16 * 4 * 16 * 2);
}

TEST_CASE("straight run equals interrupted and resumed run bitwise") {
  const auto data = pft::test::random_dataset(6, 9, pft::test::tiny_config());
  const auto d1 = pft::test::temp_dir("trainer_straight"), d2 = pft::test::temp_dir("trainer_resumed");
  auto straight = lora_model(5);
  const auto r1 = train_loop(straight, data, quick_config(d1));

  auto first = lora_model(5);
  TrainOptions stop;
  stop.stop_after = [](const TrainerState& s) { return s.global_step == 30; };
  train_loop(first, data, quick_config(d2), stop);
  auto resumed = lora_model(5);
  TrainOptions resume;
  resume.resume_from = d2 / "checkpoint-30";
  const auto r2 = train_loop(resumed, data, quick_config(d2), resume);

  CHECK(weights_of(straight) == weights_of(resumed));
  CHECK(r1.state == r2.state);
  CHECK(r1.mean_loss == r2.mean_loss);
  const auto a = lines_of(d1 / "metrics.jsonl"), b = lines_of(d2 / "metrics.jsonl");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto ja = nlohmann::json::parse(a[i]), jb = nlohmann::json::parse(b[i]);
    ja.erase("wall_ms");
    jb.erase("wall_ms");
    CHECK(ja == jb);
  }
  CHECK(pft::test::files_equal(d1 / "checkpoint-60" / "model.pfwa", d2 / "checkpoint-60" / "model.pfwa"));

  auto done = lora_model(5);
  TrainOptions at_end;
  at_end.resume_from = d1 / "checkpoint-60";
  const auto r3 = train_loop(done, data, quick_config(pft::test::temp_dir("trainer_end")), at_end);
  CHECK(r3.warnings.size() == 1);
  CHECK(weights_of(done) == weights_of(straight));
}

TEST_CASE("paged optimizer with one resident page is bitwise transparent") {
  const auto data = pft::test::random_dataset(7, 8, pft::test::tiny_config());
  auto plain = lora_model(6), paged = lora_model(6);
  TrainConfig c = quick_config("unused");
  c.max_steps = 12;
  TrainerState s1, s2;
  s1.rng = s2.rng = Rng(c.seed).state();
  std::vector<Parameter*> p1, p2;
  for (Parameter* p : plain.parameters())
    if (p->trainable) p1.push_back(p);
  for (Parameter* p : paged.parameters())
    if (p->trainable) p2.push_back(p);
  OptimizerState o1(p1), o2(p2);
  const auto dir = pft::test::temp_dir("trainer_paged");
  o2.enable_paging(dir / "pages.bin", 1);
  for (std::size_t i = 0; i < c.max_steps; ++i) {
    train_step(plain, data, s1, o1, c, c.max_steps);
    train_step(paged, data, s2, o2, c, c.max_steps);
  }
  CHECK(weights_of(plain) == weights_of(paged));
  REQUIRE(o2.paging());
  CHECK(o2.paging()->evictions() > 0);
  CHECK(o2.paging()->resident_count() == 1);

  TrainOptions opts;
  opts.write_files = false;
  auto a = lora_model(6), b = lora_model(6);
  TrainConfig ca = c;
  ca.optim = OptimKind::adamw_32bit;
  TrainConfig cb = c;
  cb.optim = OptimKind::paged_adamw_32bit;
  train_loop(a, data, ca, opts);
  train_loop(b, data, cb, opts);
  CHECK(weights_of(a) == weights_of(b));
}

TEST_CASE("frozen-base audit holds for qlora and bottleneck runs") {
  const auto data = pft::test::random_dataset(8, 6, pft::test::tiny_config());
  TrainOptions opts;
  opts.write_files = false;
  TrainConfig c = quick_config("unused");
  c.max_steps = 8;
  Rng rng(9);
  auto q = init_model(pft::test::tiny_config(), rng);
  quantize_base(q, QuantConfig{});
  attach_lora(q, LoraConfig{}, rng);
  std::vector<std::shared_ptr<const QuantizedTensor>> packed;
  for (Linear* l : q.linears()) packed.push_back(l->quantized);
  std::vector<Tensor> biases;
  for (Linear* l : q.linears()) biases.push_back(l->bias.value());
  train_loop(q, data, c, opts);
  for (std::size_t i = 0; i < packed.size(); ++i) {
    CHECK(*q.linears()[i]->quantized == *packed[i]);
    CHECK(q.linears()[i]->bias.value().bitwise_equal(biases[i]));
  }

  auto bn = init_model(pft::test::tiny_config(), rng);
  const Tensor emb = bn.token_embedding().value();
  attach_bottleneck(bn, BottleneckAdapterConfig{4, "gelu"}, rng);
  train_loop(bn, data, c, opts);
  CHECK(bn.token_embedding().value().bitwise_equal(emb));
  CHECK(bn.blocks()[0].adapter_mlp->up_weight.value().data()[0] != 0.0f);
}

TEST_CASE("search trial enumeration") {
  const SearchSpace space{{"learning_rate", {1e-4, 2e-4}}, {"epochs", {10, 20}}};
  const auto grid = enumerate_trials(space, SearchStrategy::grid, 0, 0);
  REQUIRE(grid.size() == 4);
  const std::vector<std::map<std::string, double>> expected{
      {{"epochs", 10}, {"learning_rate", 1e-4}},
      {{"epochs", 10}, {"learning_rate", 2e-4}},
      {{"epochs", 20}, {"learning_rate", 1e-4}},
      {{"epochs", 20}, {"learning_rate", 2e-4}}};
  CHECK(grid == expected);
  const auto r1 = enumerate_trials(space, SearchStrategy::random, 6, 42);
  const auto r2 = enumerate_trials(space, SearchStrategy::random, 6, 42);
  CHECK(r1.size() == 6);
  CHECK(r1 == r2);
  for (const auto& t : r1) {
    CHECK((t.at("epochs") == 10 || t.at("epochs") == 20));
    CHECK((t.at("learning_rate") == 1e-4 || t.at("learning_rate") == 2e-4));
  }
  CHECK(kind_of([] { enumerate_trials({}, SearchStrategy::grid, 0, 0); }) == ErrorKind::config);
  CHECK(kind_of([&] { enumerate_trials(space, SearchStrategy::random, 0, 0); }) == ErrorKind::config);

  const auto ranked = hyperparameter_search(space, SearchStrategy::grid, 0, 0, [](const auto& p) {
    return p.at("epochs") == 20 ? 1.0 : 2.0;
  });
  REQUIRE(ranked.size() == 4);
  CHECK(ranked[0].index == 2);
  CHECK(ranked[1].index == 3);
  CHECK(ranked[2].index == 0);
}

// Copyright 2026 The pft Authors
// SPDX-License-Identifier: Apache-2.0
#include "pft/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "pft/error.hpp"
#include "pft/store.hpp"

namespace pft {
namespace {

using json = nlohmann::json;

std::string hex_bits(double v) { return fingerprint_hex(std::bit_cast<std::uint64_t>(v)); }
double from_hex_bits(const std::string& s) { return std::bit_cast<double>(std::stoull(s, nullptr, 16)); }

std::vector<Parameter*> trainable_of(CausalLM& model) {
  std::vector<Parameter*> out;
  for (Parameter* p : model.parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

void probe_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "output_dir " + dir.string() + " cannot be created: " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) fail(ErrorKind::io, "output_dir " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

std::string checkpoint_name(std::int64_t step) { return "checkpoint-" + std::to_string(step); }

}  // namespace

std::string_view to_string(OptimKind k) noexcept {
  return k == OptimKind::adamw_32bit ? "adamw_32bit" : "paged_adamw_32bit";
}

std::string_view to_string(SchedulerKind k) noexcept { return k == SchedulerKind::cosine ? "cosine" : "constant"; }

OptimKind optim_from_string(std::string_view s) {
  if (s == "adamw_32bit" || s == "adamw_torch") return OptimKind::adamw_32bit;
  if (s == "paged_adamw_32bit") return OptimKind::paged_adamw_32bit;
  fail(ErrorKind::config, "optim must be adamw_32bit or paged_adamw_32bit, got '" + std::string(s) + "'");
}

SchedulerKind scheduler_from_string(std::string_view s) {
  if (s == "cosine") return SchedulerKind::cosine;
  if (s == "constant") return SchedulerKind::constant;
  fail(ErrorKind::config, "lr_scheduler_type must be cosine or constant, got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorKind::config, "train config: " + m); };
  if (per_device_train_batch_size < 1) bad("per_device_train_batch_size must be >= 1");
  if (gradient_accumulation_steps < 1) bad("gradient_accumulation_steps must be >= 1");
  if (save_strategy != "steps" && save_strategy != "no") bad("save_strategy must be steps or no");
  if (save_strategy == "steps" && save_steps < 1) bad("save_steps must be >= 1");
  if (logging_steps < 1) bad("logging_steps must be >= 1");
  if (!(learning_rate >= 0.0f)) bad("learning_rate must be >= 0");
  if (!(max_grad_norm > 0.0f)) bad("max_grad_norm must be > 0");
  if (!(warmup_ratio >= 0.0f && warmup_ratio < 1.0f)) bad("warmup_ratio must be in [0, 1)");
  if (epochs ? *epochs < 1 : max_steps < 1) bad("max_steps or epochs must be >= 1");
  if (!(weight_decay >= 0.0f)) bad("weight_decay must be >= 0");
  if (optim == OptimKind::paged_adamw_32bit && page_budget < 1) bad("page_budget must be >= 1");
}

std::size_t TrainConfig::total_steps(std::size_t n) const {
  if (!epochs) return max_steps;
  const std::size_t per_epoch = (n + effective_batch() - 1) / effective_batch();
  return *epochs * std::max<std::size_t>(per_epoch, 1);
}

std::size_t warmup_steps(const TrainConfig& config, std::size_t total) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(config.warmup_ratio) * static_cast<double>(total)));
}

float lr_at_step(const TrainConfig& config, std::size_t total, std::size_t s) {
  const double lr = config.learning_rate;
  const std::size_t w = warmup_steps(config, total);
  if (s < w) return static_cast<float>(lr * static_cast<double>(s + 1) / static_cast<double>(w));
  if (config.lr_scheduler_type == SchedulerKind::constant) return static_cast<float>(lr);
  if (s >= total) return 0.0f;
  const double progress = static_cast<double>(s - w) / static_cast<double>(total - w);
  return static_cast<float>(lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

std::string metrics_json(const MetricsRecord& r) {
  return json{{"step", r.step},
              {"training_loss", r.training_loss},
              {"learning_rate", r.learning_rate},
              {"wall_ms", r.wall_ms},
              {"epoch", std::round(r.epoch * 100.0) / 100.0}}
      .dump();
}

std::vector<std::uint32_t> next_batch(DataCursor& cursor, Rng& rng, std::size_t n, std::size_t batch) {
  std::vector<std::uint32_t> out;
  while (out.size() < batch) {
    if (cursor.order.size() != n || cursor.offset >= n) {
      if (cursor.order.size() == n) ++cursor.epoch;
      cursor.order.resize(n);
      for (std::size_t i = 0; i < n; ++i) cursor.order[i] = static_cast<std::uint32_t>(i);
      for (std::size_t i = n; i > 1; --i) std::swap(cursor.order[i - 1], cursor.order[rng.uniform_index(i)]);
      cursor.offset = 0;
    }
    out.push_back(cursor.order[cursor.offset++]);
  }
  return out;
}

double train_step(CausalLM& model, const std::vector<TrainingExample>& data, TrainerState& state,
                  OptimizerState& optimizer, const TrainConfig& config, std::size_t total_steps) {
  if (data.empty()) fail(ErrorKind::data, "train_step: empty dataset");
  const auto params = trainable_of(model);
  if (params.empty()) fail(ErrorKind::config, "train_step: model has no trainable parameters");
  const std::size_t B = config.per_device_train_batch_size, K = config.gradient_accumulation_steps;
  const float inv = 1.0f / static_cast<float>(B * K);

  Rng rng(state.rng);
  ForwardContext ctx{true, &rng};
  double loss_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    for (auto i : next_batch(state.cursor, rng, data.size(), B)) {
      Var loss = lm_loss(model, data[i], ctx);
      loss_sum += loss.value().item();
      backward(ops::scale(loss, inv));
    }
  }
  clip_global_norm(params, config.max_grad_norm);
  AdamWHyper hp;
  hp.lr = lr_at_step(config, total_steps, static_cast<std::size_t>(state.global_step));
  hp.weight_decay = config.weight_decay;
  adamw_step(params, optimizer, hp);
  for (Parameter* p : params) p->var.clear_grad();
  ++state.global_step;
  state.rng = rng.state();
  return loss_sum / static_cast<double>(B * K);
}

void save_checkpoint(const std::filesystem::path& dir, const CausalLM& model, OptimizerState& optimizer,
                     const TrainerState& state) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  save_model(model, dir / "model.pfwa");

  WeightArchive opt;
  const auto moments = optimizer.snapshot();
  for (std::size_t i = 0; i < moments.size(); ++i) {
    opt.put_floats(optimizer.names()[i] + ".exp_avg", moments[i].m);
    opt.put_floats(optimizer.names()[i] + ".exp_avg_sq", moments[i].v);
  }
  opt.put_text("__meta__", json{{"kind", "optimizer"},
                                {"step_count", optimizer.step_count()},
                                {"parameters", optimizer.names()}}
                               .dump());
  save_archive(opt, dir / "optimizer.pfwa");

  json words = json::array();
  for (auto w : state.rng.words) words.push_back(fingerprint_hex(w));
  json s{{"version", 1},
         {"global_step", state.global_step},
         {"rng",
          {{"algorithm_id", state.rng.algorithm_id},
           {"words", words},
           {"gaussian_spare", state.rng.gaussian_spare ? json(hex_bits(*state.rng.gaussian_spare)) : json(nullptr)}}},
         {"cursor", {{"epoch", state.cursor.epoch}, {"offset", state.cursor.offset}, {"order", state.cursor.order}}},
         {"window_loss_sum", hex_bits(state.window_loss_sum)},
         {"window_steps", state.window_steps},
         {"total_loss_sum", hex_bits(state.total_loss_sum)},
         {"total_steps_done", state.total_steps_done}};
  const std::string text = s.dump(1);
  write_file_atomic(dir / "trainer_state.json", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

TrainerState load_checkpoint(const std::filesystem::path& dir, CausalLM& model, OptimizerState& optimizer) {
  const WeightArchive weights = load_archive(dir / "model.pfwa");
  const WeightArchive opt = load_archive(dir / "optimizer.pfwa");
  const auto bytes = read_file_bytes(dir / "trainer_state.json");
  TrainerState state;
  std::vector<Moments> moments;
  std::int64_t step_count = 0;
  try {
    const auto meta = json::parse(opt.text("__meta__"));
    const auto names = meta.at("parameters").get<std::vector<std::string>>();
    if (names != optimizer.names()) {
      fail(ErrorKind::incompatible, "checkpoint: optimizer parameters differ from the model's trainable set");
    }
    step_count = meta.at("step_count").get<std::int64_t>();
    for (const auto& n : names) moments.push_back({opt.floats(n + ".exp_avg"), opt.floats(n + ".exp_avg_sq")});

    const auto s = json::parse(bytes.begin(), bytes.end());
    if (s.at("version").get<int>() != 1) fail(ErrorKind::version, "checkpoint: unsupported trainer_state version");
    state.global_step = s.at("global_step").get<std::int64_t>();
    const auto& r = s.at("rng");
    state.rng.algorithm_id = r.at("algorithm_id").get<std::uint32_t>();
    for (std::size_t i = 0; i < 4; ++i) state.rng.words[i] = std::stoull(r.at("words").at(i).get<std::string>(), nullptr, 16);
    if (!r.at("gaussian_spare").is_null()) state.rng.gaussian_spare = from_hex_bits(r["gaussian_spare"].get<std::string>());
    const auto& c = s.at("cursor");
    state.cursor.epoch = c.at("epoch").get<std::uint64_t>();
    state.cursor.offset = c.at("offset").get<std::size_t>();
    state.cursor.order = c.at("order").get<std::vector<std::uint32_t>>();
    state.window_loss_sum = from_hex_bits(s.at("window_loss_sum").get<std::string>());
    state.window_steps = s.at("window_steps").get<std::size_t>();
    state.total_loss_sum = from_hex_bits(s.at("total_loss_sum").get<std::string>());
    state.total_steps_done = s.at("total_steps_done").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    fail(ErrorKind::format, std::string("checkpoint: bad hex field: ") + e.what());
  }
  Rng validate_rng(state.rng);  // rejects a foreign algorithm id
  (void)validate_rng;

  CausalLM loaded = model_from_archive(weights);
  if (!(loaded.config() == model.config())) fail(ErrorKind::incompatible, "checkpoint: model config differs");
  auto dst = model.parameters();
  auto src = loaded.parameters();
  if (dst.size() != src.size()) fail(ErrorKind::incompatible, "checkpoint: parameter set differs from the model");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i]->name || dst[i]->value().shape() != src[i]->value().shape()) {
      fail(ErrorKind::incompatible, "checkpoint: parameter " + src[i]->name + " does not match " + dst[i]->name);
    }
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->mutable_value() = src[i]->value();
  optimizer.restore(std::move(moments));
  optimizer.set_step_count(step_count);
  return state;
}

TrainResult train_loop(CausalLM& model, const std::vector<TrainingExample>& data, const TrainConfig& config,
                       const TrainOptions& options) {
  config.validate();
  if (data.empty()) fail(ErrorKind::data, "train_loop: empty dataset");
  if (options.write_files) probe_writable(config.output_dir);
  const auto params = trainable_of(model);
  if (params.empty()) fail(ErrorKind::config, "train_loop: model has no trainable parameters");
  const std::size_t total = config.total_steps(data.size());

  std::vector<std::pair<const Parameter*, Tensor>> frozen;
  for (const Parameter* p : model.parameters())
    if (!p->trainable) frozen.emplace_back(p, p->value());
  std::vector<std::pair<const Linear*, std::shared_ptr<const QuantizedTensor>>> quantized;
  for (const Linear* l : model.linears())
    if (l->quantized) quantized.emplace_back(l, std::make_shared<const QuantizedTensor>(*l->quantized));

  OptimizerState optimizer(params);
  if (config.optim == OptimKind::paged_adamw_32bit) {
    const auto scratch = options.write_files
                             ? config.output_dir / "optimizer.pages"
                             : std::filesystem::temp_directory_path() /
                                   ("pft-pages-" + std::to_string(std::bit_cast<std::uintptr_t>(&optimizer)));
    optimizer.enable_paging(scratch, config.page_budget);
  }

  TrainResult result;
  TrainerState& state = result.state;
  state.rng = Rng(config.seed).state();
  const auto metrics_path = config.output_dir / "metrics.jsonl";
  if (options.resume_from) {
    state = load_checkpoint(*options.resume_from, model, optimizer);
    for (auto& [p, snap] : frozen) snap = p->value();
  }
  if (options.write_files) {
    // Keep only records the resumed run has already produced.
    std::vector<std::string> kept;
    if (options.resume_from) {
      std::ifstream in(metrics_path);
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        try {
          if (json::parse(line).at("step").get<std::int64_t>() <= state.global_step) kept.push_back(line);
        } catch (const json::exception&) {
        }
      }
    }
    std::ofstream out(metrics_path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + metrics_path.string());
    for (const auto& l : kept) out << l << '\n';
  }
  if (state.global_step >= static_cast<std::int64_t>(total)) {
    result.warnings.push_back("resume: checkpoint is already at step " + std::to_string(state.global_step) +
                              " of " + std::to_string(total) + "; nothing to train");
  }

  const auto t0 = std::chrono::steady_clock::now();
  while (state.global_step < static_cast<std::int64_t>(total)) {
    const float lr = lr_at_step(config, total, static_cast<std::size_t>(state.global_step));
    const double loss = train_step(model, data, state, optimizer, config, total);
    state.window_loss_sum += loss;
    ++state.window_steps;
    state.total_loss_sum += loss;
    ++state.total_steps_done;
    const auto step = state.global_step;
    if (step % static_cast<std::int64_t>(config.logging_steps) == 0 || step == static_cast<std::int64_t>(total)) {
      MetricsRecord rec;
      rec.step = step;
      rec.training_loss = static_cast<float>(state.window_loss_sum / static_cast<double>(state.window_steps));
      rec.learning_rate = lr;
      rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      rec.epoch = static_cast<double>(state.cursor.epoch) +
                  static_cast<double>(state.cursor.offset) / static_cast<double>(data.size());
      state.window_loss_sum = 0.0;
      state.window_steps = 0;
      result.records.push_back(rec);
      if (options.write_files) append_jsonl(metrics_path, metrics_json(rec));
    }
    if (options.write_files && config.save_strategy == "steps" &&
        step % static_cast<std::int64_t>(config.save_steps) == 0) {
      const auto dir = config.output_dir / checkpoint_name(step);
      save_checkpoint(dir, model, optimizer, state);
      result.checkpoints.push_back(dir);
    }
    if (options.stop_after && options.stop_after(state)) break;
  }

  for (const auto& [p, snap] : frozen) {
    if (!p->value().bitwise_equal(snap)) fail(ErrorKind::state, "frozen-base audit: " + p->name + " changed");
  }
  for (const auto& [l, snap] : quantized) {
    if (!l->quantized || !(*l->quantized == *snap)) {
      fail(ErrorKind::state, "frozen-base audit: quantized " + l->name() + " changed");
    }
  }
  result.mean_loss =
      state.total_steps_done ? state.total_loss_sum / static_cast<double>(state.total_steps_done) : 0.0;
  return result;
}

std::vector<std::map<std::string, double>> enumerate_trials(const SearchSpace& space, SearchStrategy strategy,
                                                            std::size_t budget, std::uint64_t seed) {
  if (space.empty()) fail(ErrorKind::config, "search space is empty");
  for (const auto& [k, v] : space)
    if (v.empty()) fail(ErrorKind::config, "search space key '" + k + "' has no values");
  std::vector<std::map<std::string, double>> out;
  if (strategy == SearchStrategy::grid) {
    out.emplace_back();
    for (const auto& [key, values] : space) {
      std::vector<std::map<std::string, double>> next;
      for (const auto& partial : out) {
        for (double v : values) {
          auto t = partial;
          t[key] = v;
          next.push_back(std::move(t));
        }
      }
      out = std::move(next);
    }
    return out;
  }
  if (budget < 1) fail(ErrorKind::config, "random search needs a budget >= 1");
  Rng rng(seed);
  for (std::size_t i = 0; i < budget; ++i) {
    std::map<std::string, double> t;
    for (const auto& [key, values] : space) t[key] = values[rng.uniform_index(values.size())];
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trial> hyperparameter_search(const SearchSpace& space, SearchStrategy strategy, std::size_t budget,
                                         std::uint64_t seed,
                                         const std::function<double(const std::map<std::string, double>&)>& objective) {
  std::vector<Trial> trials;
  for (auto& params : enumerate_trials(space, strategy, budget, seed)) {
    Trial t;
    t.index = trials.size();
    t.objective = objective(params);
    t.params = std::move(params);
    trials.push_back(std::move(t));
  }
  std::stable_sort(trials.begin(), trials.end(), [](const Trial& a, const Trial& b) {
    return a.objective < b.objective;
  });
  return trials;
}

}  // namespace pft

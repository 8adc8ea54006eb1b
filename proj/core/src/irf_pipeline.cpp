// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/irf_pipeline.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <thread>

#include "ota/error.hpp"
#include "ota/nn_utils.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::irf {
namespace fs = std::filesystem;

std::vector<double> make_lr_grid(double lo, double hi, std::int64_t n) {
  if (n < 2) throw ValidationError("make_lr_grid: n must be at least 2");
  if (!(lo > 0.0 && lo < hi) || !std::isfinite(hi)) throw ValidationError("make_lr_grid: need 0 < lo < hi");
  const double top = std::log10(hi);
  const double bottom = std::log10(lo);
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (i == 0) {
      grid.push_back(hi);
      continue;
    }
    if (i == n - 1) {
      grid.push_back(lo);
      continue;
    }
    const double exponent = top - (top - bottom) * static_cast<double>(i) / static_cast<double>(n - 1);
    const double rounded = std::round(exponent);
    // Whole decades are parsed from their decimal form so 1e-3 is the literal 1e-3.
    if (std::abs(exponent - rounded) < 1e-9) {
      grid.push_back(std::stod("1e" + std::to_string(static_cast<long long>(rounded))));
    } else {
      grid.push_back(std::pow(10.0, exponent));
    }
  }
  return grid;
}

StageConfig default_stage3_config() {
  StageConfig c;
  c.steps = 500;
  c.batch_size = 64;
  c.optimizer = {OptimizerKind::sgd_nesterov, 0.9, 1e-5};
  c.lr_schedule = {1.0, {0.6, 0.9}, 0.1};
  c.lr_grid = make_lr_grid(1e-3, 1.0, 4);
  c.wd_grid = {1e-5};
  c.input = {32, 28};
  return c;
}

StageConfig default_stage4_config() {
  StageConfig c = default_stage3_config();
  c.lr_grid = make_lr_grid(1e-5, 1e-2, 4);
  c.wd_grid = make_lr_grid(1e-5, 1e-3, 3);
  c.lr_schedule.initial = c.lr_grid.front();
  return c;
}

StageConfig default_baseline_config() {
  StageConfig c = default_stage4_config();
  c.steps = 1000;
  return c;
}

StageConfig default_pretrain_config() {
  StageConfig c;
  c.steps = 1500;
  c.batch_size = 64;
  c.optimizer = {OptimizerKind::sgd_nesterov, 0.9, 5e-4};
  c.lr_schedule = {0.01, {0.6, 0.9}, 0.1};
  c.lr_grid = {0.01};
  c.wd_grid = {5e-4};
  c.input = {32, 28};
  return c;
}

nlohmann::json to_json(const GridSearchResult& r) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"lr", t.lr},
                      {"wd", t.wd},
                      {"val_metric", t.diverged ? nlohmann::json(nullptr) : nlohmann::json(t.val_metric)},
                      {"diverged", t.diverged}});
  }
  return {{"trials", trials},
          {"winner", {{"lr", r.winner_trial().lr}, {"wd", r.winner_trial().wd}, {"index", r.winner}}},
          {"selection_rule", "max val top1, first in trial order on ties"}};
}

TrainTrace train_classifier(TaskModel& model, const DatasetManifest& train, const StageConfig& stage, double lr,
                            double weight_decay, SeededRng& rng) {
  stage.validate_allow_zero_steps();
  if (!train.labeled()) throw ProvenanceError("classifier training needs labeled data");
  if (train.num_classes() > model.num_classes())
    throw ShapeError("dataset has more classes than the task head");

  auto& net = model.net();
  const bool frozen = model.freeze_policy() == FreezePolicy::backbone_frozen;
  nn::set_requires_grad(*net.backbone, !frozen);
  nn::set_requires_grad(*net.head, true);
  std::vector<torch::Tensor> params = frozen ? net.head->parameters() : net.parameters();
  auto optimizer = nn::make_optimizer(std::move(params), stage.optimizer, lr, weight_decay);
  const auto schedule = stage.lr_schedule.with_initial(lr);

  nn::EpochSampler sampler(train.size(), rng.derive("batches"));
  auto crop_rng = rng.derive("crops");
  TrainTrace trace;
  trace.lr.reserve(static_cast<std::size_t>(stage.steps));
  net.train();
  for (std::int64_t step = 0; step < stage.steps; ++step) {
    const double current = schedule.lr_at(step, stage.steps);
    nn::set_learning_rate(*optimizer, current);
    trace.lr.push_back(current);

    auto idx = sampler.next(static_cast<std::size_t>(stage.batch_size));
    auto x = nn::train_inputs(train.images(idx), stage.input, crop_rng);
    auto y = train.labels(idx);
    torch::Tensor logits;
    if (frozen) {
      torch::Tensor features;
      {
        torch::NoGradGuard no_grad;
        features = net.backbone->forward(x);
      }
      logits = net.head->forward(features);
    } else {
      logits = net.forward(x);
    }
    auto loss = torch::nn::functional::cross_entropy(logits, y);
    const double value = loss.item<double>();
    nn::ensure_finite(value, "classifier step " + std::to_string(step));
    optimizer->zero_grad();
    loss.backward();
    optimizer->step();
    trace.loss.push_back(value);
  }
  net.eval();
  nn::set_requires_grad(net, true);
  return trace;
}

StageOutput grid_search(const TaskModel& start, const DatasetManifest& data, const StageConfig& stage, SeededRng& rng,
                        const std::string& stage_name, const StageOptions& options) {
  stage.validate_allow_zero_steps();
  auto [train, val] = holdout_split(data, options.val_fraction, rng.derive("holdout"));
  if (val.empty()) throw ValidationError(stage_name + ": empty validation split");

  struct Slot {
    GridTrial trial;
    std::optional<TaskModel> model;
    TrainTrace trace;
  };
  std::vector<Slot> slots;
  for (double lr : stage.lr_grid)
    for (double wd : stage.wd_grid) slots.push_back(Slot{GridTrial{lr, wd, 0.0, false}, std::nullopt, {}});

  auto run_trial = [&](std::size_t t) {
    auto& slot = slots[t];
    auto model = start.clone();
    auto trial_rng = rng.derive(stage_name + "/trial/" + std::to_string(t));
    try {
      slot.trace = train_classifier(model, train, stage, slot.trial.lr, slot.trial.wd, trial_rng);
      slot.trial.val_metric = top1(model, val, stage.input.resize);
    } catch (const DivergenceError&) {
      slot.trial.diverged = true;
      slot.trial.val_metric = std::numeric_limits<double>::quiet_NaN();
    }
    slot.model = std::move(model);
  };

  const auto jobs = static_cast<std::size_t>(std::max(1, options.jobs));
  if (jobs == 1 || slots.size() == 1) {
    for (std::size_t t = 0; t < slots.size(); ++t) run_trial(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::min(jobs, slots.size()); ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t t = next++; t < slots.size(); t = next++) run_trial(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : workers) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  StageOutput out;
  std::optional<std::size_t> winner;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    out.grid.trials.push_back(slots[t].trial);
    if (slots[t].trial.diverged) continue;
    if (!winner || slots[t].trial.val_metric > slots[*winner].trial.val_metric) winner = t;
  }
  if (!winner) throw DivergenceError(stage_name + ": every grid trial diverged");
  out.grid.winner = *winner;
  out.trace = std::move(slots[*winner].trace);

  CheckpointMeta meta;
  meta.stage_name = stage_name;
  meta.seed = rng.seed();
  meta.config_digest = config_digest({{"stage", stage_name}, {"config", to_json(stage)}});
  meta.created_at = timestamp_now();
  meta.extra["grid"] = to_json(out.grid);
  out.checkpoint = slots[*winner].model->to_checkpoint(std::move(meta));
  return out;
}

namespace {

void require_provenance(const DatasetManifest& data, Provenance expected, bool allow_override,
                        const std::string& stage) {
  if (data.provenance() == Provenance::pseudo)
    throw ProvenanceError(stage + ": pseudo (generated) data is only usable for distillation");
  if (data.provenance() != expected && !allow_override)
    throw ProvenanceError(stage + ": expected " + std::string(to_string(expected)) + " data, got " +
                          std::string(to_string(data.provenance())) +
                          " (pass the ablation override to accept it)");
}

}  // namespace

StageOutput stage3_deliver(const TaskModel& model, const DatasetManifest& rerep, const StageConfig& stage,
                           SeededRng& rng, const StageOptions& options) {
  require_provenance(rerep, Provenance::re_represented, options.allow_provenance_override, "deliver");
  if (model.freeze_policy() != FreezePolicy::backbone_frozen)
    throw ValidationError("deliver: the model must use the backbone_frozen policy");
  return grid_search(model, rerep, stage, rng, "deliver", options);
}

StageOutput stage4_calibrate(const TaskModel& warm, const DatasetManifest& original, const StageConfig& stage,
                             SeededRng& rng, const StageOptions& options) {
  require_provenance(original, Provenance::original, options.allow_provenance_override, "calibrate");
  auto model = warm.clone();
  model.set_freeze_policy(FreezePolicy::all_trainable);
  return grid_search(model, original, stage, rng, "calibrate", options);
}

std::string_view to_string(DataChoice choice) noexcept {
  return choice == DataChoice::original ? "original" : "re_represented";
}

DataChoice data_choice_from_string(std::string_view text) {
  if (text == "original") return DataChoice::original;
  if (text == "re_represented" || text == "rec") return DataChoice::re_represented;
  throw ValidationError("unknown data choice '" + std::string(text) + "' (original | re_represented)");
}

nlohmann::json write_stage_report(const fs::path& dir, const std::string& stage, const StageConfig& config,
                                  std::uint64_t seed, const nlohmann::json& metrics, const TrainTrace& trace) {
  fs::create_directories(dir);
  const auto trace_path = dir / (stage + ".lr_trace.tsv");
  {
    std::ofstream out(trace_path, std::ios::binary);
    out << "step\tlr\tloss\n";
    out.precision(17);
    for (std::size_t i = 0; i < trace.lr.size(); ++i)
      out << i << '\t' << trace.lr[i] << '\t' << (i < trace.loss.size() ? trace.loss[i] : 0.0) << '\n';
  }
  nlohmann::json report{{"stage", stage},
                        {"config", to_json(config)},
                        {"seed", seed},
                        {"metrics", metrics},
                        {"lr_trace_path", trace_path.filename().string()}};
  std::ofstream out(dir / (stage + ".report.json"), std::ios::binary);
  out << report.dump(2) << '\n';
  return report;
}

IrfResult run_irf(const Checkpoint& backbone, const DatasetManifest& downstream, const Checkpoint& vq,
                  const IrfOptions& options, SeededRng& rng) {
  IrfResult result;
  StageOptions stage_options{options.val_fraction, false, options.jobs};

  try {
    auto tokenizer = vq::VqTokenizer::from_checkpoint(vq);
    result.rerepresented = vq::rerepresent(downstream, tokenizer);
    result.stage2 = vq;
    result.stage2.meta.stage_name = "assemble";
  } catch (const std::exception& e) {
    throw StageError("assemble", e.what());
  }

  try {
    auto head_rng = rng.derive("head");
    auto model = TaskModel::from_backbone(backbone, downstream.num_classes(), head_rng);
    model.set_freeze_policy(FreezePolicy::backbone_frozen);
    const bool use_original = options.delivering == DataChoice::original;
    auto opts = stage_options;
    opts.allow_provenance_override = use_original;
    result.stage3 = stage3_deliver(model, use_original ? downstream : result.rerepresented, options.stage3, rng, opts);
  } catch (const std::exception& e) {
    throw StageError("deliver", e.what());
  }

  try {
    auto warm = TaskModel::from_checkpoint(result.stage3.checkpoint);
    const bool use_rerep = options.calibration == DataChoice::re_represented;
    auto opts = stage_options;
    opts.allow_provenance_override = use_rerep;
    result.stage4 = stage4_calibrate(warm, use_rerep ? result.rerepresented : downstream, options.stage4, rng, opts);
  } catch (const std::exception& e) {
    throw StageError("calibrate", e.what());
  }

  result.report = {{"method", "irf"},
                   {"seed", rng.seed()},
                   {"delivering_data", std::string(to_string(options.delivering))},
                   {"calibration_data", std::string(to_string(options.calibration))},
                   {"stage3", {{"grid", to_json(result.stage3.grid)}}},
                   {"stage4", {{"grid", to_json(result.stage4.grid)}}},
                   {"val_top1", result.stage4.grid.winner_trial().val_metric},
                   {"winner_lr", result.stage4.grid.winner_trial().lr},
                   {"winner_wd", result.stage4.grid.winner_trial().wd}};

  if (options.output_dir) {
    const auto& dir = *options.output_dir;
    fs::create_directories(dir);
    save_checkpoint(result.stage2, dir / "stage2_assemble.ckpt");
    save_checkpoint(result.stage3.checkpoint, dir / "stage3_deliver.ckpt");
    save_checkpoint(result.stage4.checkpoint, dir / "stage4_calibrate.ckpt");
    write_stage_report(dir, "stage3_deliver", options.stage3, rng.seed(),
                       {{"grid", to_json(result.stage3.grid)}}, result.stage3.trace);
    write_stage_report(dir, "stage4_calibrate", options.stage4, rng.seed(),
                       {{"grid", to_json(result.stage4.grid)}}, result.stage4.trace);
    std::ofstream out(dir / "irf.report.json", std::ios::binary);
    out << result.report.dump(2) << '\n';
  }
  return result;
}

StageOutput linear_probe(const Checkpoint& backbone, const DatasetManifest& data, const StageConfig& stage,
                         SeededRng& rng, const StageOptions& options) {
  require_provenance(data, Provenance::original, options.allow_provenance_override, "linear_probe");
  auto head_rng = rng.derive("head");
  auto model = TaskModel::from_backbone(backbone, data.num_classes(), head_rng);
  model.set_freeze_policy(FreezePolicy::backbone_frozen);
  return grid_search(model, data, stage, rng, "linear_probe", options);
}

StageOutput finetune(const Checkpoint& backbone, const DatasetManifest& data, const StageConfig& stage,
                     SeededRng& rng, const StageOptions& options) {
  require_provenance(data, Provenance::original, options.allow_provenance_override, "finetune");
  auto head_rng = rng.derive("head");
  auto model = TaskModel::from_backbone(backbone, data.num_classes(), head_rng);
  model.set_freeze_policy(FreezePolicy::all_trainable);
  return grid_search(model, data, stage, rng, "finetune", options);
}

nlohmann::json baseline_report(const std::string& method, const std::string& dataset, double top1_value,
                               const StageOutput& output) {
  return {{"method", method},
          {"dataset", dataset},
          {"top1", top1_value},
          {"winner_lr", output.grid.winner_trial().lr},
          {"winner_wd", output.grid.winner_trial().wd},
          {"grid", to_json(output.grid)}};
}

Checkpoint pretrain_backbone(const DatasetManifest& upstream, const BackboneConfig& config, const StageConfig& stage,
                             SeededRng& rng) {
  if (upstream.empty()) throw ValidationError("pretrain_backbone: upstream dataset is empty");
  auto init_rng = rng.derive("init");
  auto model = TaskModel::initialize(config, upstream.num_classes(), init_rng);
  auto train_rng = rng.derive("train");
  train_classifier(model, upstream, stage, stage.lr_schedule.initial, stage.optimizer.weight_decay, train_rng);
  CheckpointMeta meta;
  meta.stage_name = "pretrain_backbone";
  meta.seed = rng.seed();
  meta.config_digest = config_digest({{"backbone", to_json(config)}, {"stage", to_json(stage)}});
  meta.created_at = timestamp_now();
  return model.to_checkpoint(std::move(meta));
}

}  // namespace ota::irf

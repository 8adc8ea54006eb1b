// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/distiller.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/nn_utils.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::distill {
namespace fs = std::filesystem;

void DistillConfig::validate() const {
  if (epochs < 0) throw ValidationError("distill.epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("distill.batch_size must be >= 1");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("distill: lr and weight_decay must be >= 0, momentum in [0, 1)");
  if (input.crop < 1 || input.crop > input.resize) throw ValidationError("distill.input: need 1 <= crop <= resize");
}

nlohmann::json to_json(const DistillConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"momentum", c.momentum},
          {"input", {{"resize", c.input.resize}, {"crop", c.input.crop}}},
          {"use_adapter", c.use_adapter},
          {"loss", "feature_l2"}};
}

DistillConfig distill_config_from_json(const nlohmann::json& json, const DistillConfig& defaults,
                                       const std::string& context) {
  DistillConfig c = defaults;
  JsonFields f(json, context);
  f.read("epochs", c.epochs).read("batch_size", c.batch_size).read("lr", c.lr);
  f.read("weight_decay", c.weight_decay).read("momentum", c.momentum).read("use_adapter", c.use_adapter);
  std::string loss = "feature_l2";
  f.read("loss", loss);
  if (loss != "feature_l2") throw ValidationError(context + ".loss: only feature_l2 is supported");
  if (const auto* in = f.child("input")) {
    JsonFields g(*in, context + ".input");
    g.read("resize", c.input.resize).read("crop", c.input.crop);
    g.finish();
  }
  f.finish();
  c.validate();
  return c;
}

FeatureAdapterImpl::FeatureAdapterImpl(std::int64_t student_dim_, std::int64_t teacher_dim_)
    : student_dim(student_dim_), teacher_dim(teacher_dim_) {
  if (student_dim != teacher_dim) linear = register_module("linear", torch::nn::Linear(student_dim, teacher_dim));
}

torch::Tensor FeatureAdapterImpl::forward(const torch::Tensor& features) {
  return identity() ? features : linear->forward(features);
}

namespace {

double max_abs_grad(const std::vector<torch::Tensor>& params) {
  double m = 0.0;
  for (const auto& p : params)
    if (p.grad().defined()) m = std::max(m, p.grad().abs().max().item<double>());
  return m;
}

}  // namespace

DistillResult distill(const Checkpoint& teacher_ckpt, const TaskModel& student_in, const DatasetManifest& corpus,
                      const DistillConfig& config, SeededRng& rng) {
  config.validate();
  if (corpus.provenance() == Provenance::re_represented)
    throw ProvenanceError("distill: corpus must be pseudo or original data");
  if (corpus.empty()) throw ValidationError("distill: corpus is empty");

  auto teacher = TaskModel::from_checkpoint(teacher_ckpt);
  auto student = student_in.clone();
  if (teacher.config().channels != corpus.shape().channels || student.config().channels != corpus.shape().channels)
    throw ShapeError("distill: corpus channels differ from the backbones");
  const auto t_dim = teacher.config().feature_dim();
  const auto s_dim = student.config().feature_dim();
  if (t_dim != s_dim && !config.use_adapter)
    throw ShapeError("distill: student width " + std::to_string(s_dim) + " differs from teacher width " +
                     std::to_string(t_dim) + " and no adapter is allowed");

  DistillResult result;
  result.teacher_checksum_before = params_checksum(teacher_ckpt.params, "backbone.");

  FeatureAdapter adapter(s_dim, t_dim);
  auto adapter_rng = rng.derive("adapter");
  nn::init_module(*adapter, adapter_rng);

  auto& t_backbone = *teacher.net().backbone;
  auto& s_backbone = *student.net().backbone;
  nn::set_requires_grad(t_backbone, false);
  t_backbone.eval();
  s_backbone.train();

  std::vector<torch::Tensor> params = s_backbone.parameters();
  for (auto& p : adapter->parameters()) params.push_back(p);
  OptimizerConfig opt{OptimizerKind::sgd_nesterov, config.momentum, config.weight_decay};
  auto optimizer = nn::make_optimizer(params, opt, config.lr, config.weight_decay);

  auto order_rng = rng.derive("order");
  auto crop_rng = rng.derive("crops");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  bool first = true;

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto end = std::min(order.size(), start + batch);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      auto x = nn::train_inputs(corpus.images(idx), config.input, crop_rng);
      torch::Tensor target;
      {
        torch::NoGradGuard no_grad;
        target = t_backbone.forward(x);
      }
      auto diff = adapter->forward(s_backbone.forward(x)) - target;
      auto loss = diff.pow(2).sum(1).mean();
      const double value = loss.item<double>();
      nn::ensure_finite(value, "distill epoch " + std::to_string(epoch));
      optimizer->zero_grad();
      loss.backward();
      if (first) {
        result.initial_loss = value;
        result.initial_max_abs_grad = max_abs_grad(params);
        first = false;
      }
      optimizer->step();
      sum += value * static_cast<double>(idx.size());
      seen += idx.size();
    }
    result.epoch_losses.push_back(sum / static_cast<double>(seen));
  }
  s_backbone.eval();
  nn::set_requires_grad(s_backbone, true);

  const auto teacher_after = teacher.to_checkpoint({});
  result.teacher_checksum_after = params_checksum(teacher_after.params, "backbone.");
  if (result.teacher_checksum_after != result.teacher_checksum_before)
    throw Error("distill: teacher parameters changed");

  CheckpointMeta meta;
  meta.stage_name = "distill";
  meta.seed = rng.seed();
  meta.config_digest = config_digest(to_json(config));
  meta.created_at = timestamp_now();
  meta.extra["epoch_losses"] = result.epoch_losses;
  meta.extra["teacher_checksum"] = result.teacher_checksum_before;
  result.student = student.to_checkpoint(meta);

  CheckpointMeta adapter_meta = meta;
  adapter_meta.stage_name = "distill_adapter";
  adapter_meta.extra = {{"kind", "adapter"},
                        {"student_dim", s_dim},
                        {"teacher_dim", t_dim},
                        {"identity", adapter->identity()}};
  result.adapter = Checkpoint{nn::export_params(*adapter, "adapter."), adapter_meta};
  return result;
}

irf::StageOutput final_finetune(const Checkpoint& student, const DatasetManifest& few_data, const StageConfig& stage,
                                SeededRng& rng, const FinetuneOptions& options) {
  if (few_data.provenance() != Provenance::original)
    throw ProvenanceError("final_finetune: only original downstream data is allowed, got " +
                          std::string(to_string(few_data.provenance())));
  irf::StageOptions stage_options{options.val_fraction, false, options.jobs};
  if (!options.lp_then_ft) return irf::finetune(student, few_data, stage, rng, stage_options);

  auto probe_rng = rng.derive("probe");
  auto probe = irf::linear_probe(student, few_data, stage, probe_rng, stage_options);
  auto model = TaskModel::from_checkpoint(probe.checkpoint);
  model.set_freeze_policy(FreezePolicy::all_trainable);
  return irf::grid_search(model, few_data, stage, rng, "finetune", stage_options);
}

std::string_view to_string(OtaOrder order) noexcept {
  return order == OtaOrder::irf_then_digg ? "irf_then_digg" : "digg_then_irf";
}

OtaOrder ota_order_from_string(std::string_view text) {
  if (text == "irf_then_digg") return OtaOrder::irf_then_digg;
  if (text == "digg_then_irf") return OtaOrder::digg_then_irf;
  throw ValidationError("unknown order '" + std::string(text) + "' (irf_then_digg | digg_then_irf)");
}

std::string_view to_string(StudentInit init) noexcept { return init == StudentInit::random ? "random" : "upstream"; }

StudentInit student_init_from_string(std::string_view text) {
  if (text == "random") return StudentInit::random;
  if (text == "upstream") return StudentInit::upstream;
  throw ValidationError("unknown student init '" + std::string(text) + "' (random | upstream)");
}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

TaskModel make_student(const OtaInputs& inputs, const OtaOptions& options, std::int64_t num_classes,
                       SeededRng& rng) {
  if (options.student_init == StudentInit::random) return TaskModel::initialize(options.student, num_classes, rng);
  if (!inputs.student_upstream) throw ValidationError("student_init = upstream needs an upstream student checkpoint");
  auto head_rng = rng.derive("head");
  return TaskModel::from_backbone(*inputs.student_upstream, num_classes, head_rng);
}

}  // namespace

OtaResult run_ota(OtaOrder order, const OtaInputs& inputs, const OtaOptions& options, SeededRng& rng) {
  const auto& down = inputs.downstream;
  if (down.provenance() != Provenance::original)
    throw ProvenanceError("run_ota: downstream data must have original provenance");

  auto vq_model = stage("digg", [&] { return vq::VqTokenizer::from_checkpoint(inputs.vq); });
  auto lt_model = stage("digg", [&] { return lt::LatentTransformer::from_checkpoint(inputs.lt); });
  auto student_rng = rng.derive("student");
  auto student = stage("distill", [&] { return make_student(inputs, options, down.num_classes(), student_rng); });

  auto build_corpus = [&] {
    return stage("digg", [&] {
      auto digg_rng = rng.derive("digg");
      auto digg_options = options.digg;
      if (options.output_dir && digg_options.contact_sheet.empty())
        digg_options.contact_sheet = *options.output_dir / "digg_contact_sheet.png";
      return digg::build_distill_set(down, options.target_count, vq_model, lt_model, digg_options, digg_rng);
    });
  };

  nlohmann::json report{{"order", std::string(to_string(order))},
                        {"dataset", inputs.dataset_name},
                        {"seed", rng.seed()},
                        {"teacher",
                         {{"stage_name", inputs.teacher.meta.stage_name},
                          {"checksum", params_checksum(inputs.teacher.params, "backbone.")}}},
                        {"student",
                         {{"backbone", to_json(student.config())},
                          {"init", std::string(to_string(options.student_init))}}}};
  OtaResult result;
  DistillResult distilled;
  auto distill_rng = rng.derive("distill");
  irf::StageOutput final_stage;

  if (order == OtaOrder::irf_then_digg) {
    auto irf_rng = rng.derive("irf");
    auto irf_result = irf::run_irf(inputs.teacher, down, inputs.vq, options.irf, irf_rng);
    report["irf"] = irf_result.report;
    auto corpus = build_corpus();
    report["corpus_size"] = corpus.size();
    distilled = stage("distill",
                      [&] { return distill(irf_result.stage4.checkpoint, student, corpus, options.distill, distill_rng); });
    auto ft_rng = rng.derive("finetune");
    final_stage = stage("finetune", [&] {
      return final_finetune(distilled.student, down, options.finetune, ft_rng, options.finetune_options);
    });
  } else {
    auto corpus = build_corpus();
    report["corpus_size"] = corpus.size();
    distilled = stage("distill", [&] { return distill(inputs.teacher, student, corpus, options.distill, distill_rng); });
    auto irf_rng = rng.derive("irf");
    auto irf_result = irf::run_irf(distilled.student, down, inputs.vq, options.irf, irf_rng);
    report["irf"] = irf_result.report;
    final_stage = std::move(irf_result.stage4);
  }

  report["distill"] = {{"config", to_json(options.distill)},
                       {"epoch_losses", distilled.epoch_losses},
                       {"initial_loss", distilled.initial_loss},
                       {"teacher_checksum_before", distilled.teacher_checksum_before},
                       {"teacher_checksum_after", distilled.teacher_checksum_after}};
  report["final_grid"] = irf::to_json(final_stage.grid);
  const double val_top1 = final_stage.grid.winner_trial().val_metric;
  report["val_top1"] = val_top1;
  auto final_model = TaskModel::from_checkpoint(final_stage.checkpoint);
  if (inputs.test) {
    report["top1"] = top1(final_model, *inputs.test, options.finetune.input.resize);
    report["top1_source"] = "test";
  } else {
    report["top1"] = val_top1;
    report["top1_source"] = "validation";
  }

  result.final_model = final_stage.checkpoint;
  result.final_model.meta.stage_name = "ota_" + std::string(to_string(order));
  result.report = std::move(report);

  if (options.output_dir) {
    const auto& dir = *options.output_dir;
    fs::create_directories(dir);
    save_checkpoint(distilled.student, dir / "distill_student.ckpt");
    save_checkpoint(distilled.adapter, dir / "distill_adapter.ckpt");
    save_checkpoint(result.final_model, dir / "final.ckpt");
    std::ofstream out(dir / "ota.report.json", std::ios::binary);
    out << result.report.dump(2) << '\n';
  }
  return result;
}

std::string comparison_tsv(const std::vector<nlohmann::json>& reports) {
  std::vector<std::string> datasets;
  std::vector<std::string> methods;
  std::map<std::pair<std::string, std::string>, double> cells;
  for (const auto& r : reports) {
    const auto method = r.contains("order") ? r.at("order").get<std::string>() : r.at("method").get<std::string>();
    const auto dataset = r.at("dataset").get<std::string>();
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
    if (std::find(datasets.begin(), datasets.end(), dataset) == datasets.end()) datasets.push_back(dataset);
    cells[{method, dataset}] = r.at("top1").get<double>();
  }
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "method";
  for (const auto& d : datasets) out << '\t' << d;
  out << "\taverage\n";
  for (const auto& m : methods) {
    out << m;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& d : datasets) {
      auto it = cells.find({m, d});
      if (it == cells.end()) {
        out << "\t-";
        continue;
      }
      out << '\t' << 100.0 * it->second;
      sum += it->second;
      ++n;
    }
    if (n > 0)
      out << '\t' << 100.0 * sum / static_cast<double>(n) << '\n';
    else
      out << "\t-\n";
  }
  return out.str();
}

}  // namespace ota::distill

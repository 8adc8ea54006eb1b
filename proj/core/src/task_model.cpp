// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/task_model.hpp"

#include <numeric>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"
#include "ota/nn_utils.hpp"

namespace ota {

void BackboneConfig::validate() const {
  if (channels < 1 || depth < 1 || width < 1) throw ValidationError("backbone: sizes must be positive");
  if (depth > 6) throw ValidationError("backbone: depth above 6 is not supported");
}

nlohmann::json to_json(const BackboneConfig& c) {
  return {{"channels", c.channels}, {"depth", c.depth}, {"width", c.width}};
}

BackboneConfig backbone_config_from_json(const nlohmann::json& json, const BackboneConfig& defaults,
                                         const std::string& context) {
  BackboneConfig c = defaults;
  JsonFields f(json, context);
  f.read("channels", c.channels).read("depth", c.depth).read("width", c.width);
  f.finish();
  c.validate();
  return c;
}

BackboneImpl::BackboneImpl(const BackboneConfig& c) {
  torch::nn::Sequential body;
  std::int64_t in = c.channels;
  for (std::int64_t i = 0; i < c.depth; ++i) {
    const std::int64_t out = c.width << i;
    const std::int64_t groups = out % 4 == 0 ? 4 : 1;
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    body->push_back(torch::nn::GroupNorm(groups, out));
    body->push_back(torch::nn::ReLU());
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    body->push_back(torch::nn::GroupNorm(groups, out));
    body->push_back(torch::nn::ReLU());
    if (i + 1 < c.depth) body->push_back(torch::nn::MaxPool2d(torch::nn::MaxPool2dOptions(2)));
    in = out;
  }
  body_ = register_module("body", body);
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& images) { return body_->forward(images).mean({2, 3}); }

TaskNetImpl::TaskNetImpl(const BackboneConfig& config, std::int64_t num_classes) {
  backbone = register_module("backbone", Backbone(config));
  head = register_module("head", torch::nn::Linear(config.feature_dim(), num_classes));
}

TaskModel::TaskModel(BackboneConfig config, std::int64_t num_classes, std::shared_ptr<TaskNetImpl> net)
    : config_(std::move(config)), num_classes_(num_classes), net_(std::move(net)) {}

TaskModel TaskModel::initialize(const BackboneConfig& config, std::int64_t num_classes, SeededRng& rng) {
  config.validate();
  if (num_classes < 1) throw ValidationError("task model needs at least one class");
  auto net = std::make_shared<TaskNetImpl>(config, num_classes);
  auto backbone_rng = rng.derive("backbone");
  auto head_rng = rng.derive("head");
  nn::init_module(*net->backbone, backbone_rng);
  nn::init_module(*net->head, head_rng);
  return TaskModel(config, num_classes, std::move(net));
}

TaskModel TaskModel::from_checkpoint(const Checkpoint& checkpoint) {
  const auto& extra = checkpoint.meta.extra;
  if (extra.value("kind", "") != "task") throw ValidationError("checkpoint is not a task model");
  auto config = backbone_config_from_json(extra.at("backbone"), BackboneConfig{}, "task checkpoint backbone");
  const auto num_classes = extra.at("num_classes").get<std::int64_t>();
  auto net = std::make_shared<TaskNetImpl>(config, num_classes);
  nn::import_params(*net, checkpoint.params);
  TaskModel model(config, num_classes, std::move(net));
  if (extra.value("freeze_policy", "all_trainable") == "backbone_frozen")
    model.set_freeze_policy(FreezePolicy::backbone_frozen);
  return model;
}

TaskModel TaskModel::from_backbone(const Checkpoint& checkpoint, std::int64_t num_classes, SeededRng& head_rng) {
  const auto& extra = checkpoint.meta.extra;
  if (extra.value("kind", "") != "task") throw ValidationError("checkpoint does not hold a backbone");
  auto config = backbone_config_from_json(extra.at("backbone"), BackboneConfig{}, "backbone checkpoint");
  if (num_classes < 1) throw ValidationError("task model needs at least one class");
  auto net = std::make_shared<TaskNetImpl>(config, num_classes);
  nn::import_params(*net->backbone, checkpoint.params, "backbone.");
  nn::init_module(*net->head, head_rng);
  return TaskModel(config, num_classes, std::move(net));
}

Checkpoint TaskModel::to_checkpoint(CheckpointMeta meta) const {
  meta.extra["kind"] = "task";
  meta.extra["backbone"] = to_json(config_);
  meta.extra["num_classes"] = num_classes_;
  meta.extra["freeze_policy"] = freeze_ == FreezePolicy::backbone_frozen ? "backbone_frozen" : "all_trainable";
  return Checkpoint{nn::export_params(*net_), std::move(meta)};
}

TaskModel TaskModel::clone() const {
  auto net = std::make_shared<TaskNetImpl>(config_, num_classes_);
  nn::import_params(*net, nn::export_params(*net_));
  TaskModel copy(config_, num_classes_, std::move(net));
  copy.freeze_ = freeze_;
  return copy;
}

std::string TaskModel::backbone_checksum() const { return params_checksum(nn::export_params(*net_), "backbone."); }

std::string TaskModel::head_checksum() const { return params_checksum(nn::export_params(*net_), "head."); }

namespace {

constexpr std::size_t kEvalChunk = 128;

template <typename Fn>
void for_each_chunk(const DatasetManifest& dataset, Fn&& fn) {
  if (dataset.empty()) throw ValidationError("dataset is empty");
  for (std::size_t begin = 0; begin < dataset.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(dataset.size(), begin + kEvalChunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    fn(idx);
  }
}

void check_channels(const TaskModel& model, const DatasetManifest& dataset) {
  if (dataset.shape().channels != model.config().channels)
    throw ShapeError("dataset has " + std::to_string(dataset.shape().channels) + " channels, model expects " +
                     std::to_string(model.config().channels));
}

}  // namespace

torch::Tensor extract_backbone_features(const TaskModel& model, const DatasetManifest& dataset,
                                        std::int64_t resize) {
  check_channels(model, dataset);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for_each_chunk(dataset, [&](const std::vector<std::size_t>& idx) {
    parts.push_back(model.net().backbone->forward(nn::resize_square(dataset.images(idx), resize)));
  });
  return torch::cat(parts).contiguous();
}

std::vector<std::int64_t> predict(const TaskModel& model, const DatasetManifest& dataset, std::int64_t resize) {
  check_channels(model, dataset);
  torch::NoGradGuard no_grad;
  std::vector<std::int64_t> out;
  out.reserve(dataset.size());
  for_each_chunk(dataset, [&](const std::vector<std::size_t>& idx) {
    auto logits = model.net().forward(nn::resize_square(dataset.images(idx), resize));
    auto best = nn::argmax_rows(logits);
    out.insert(out.end(), best.begin(), best.end());
  });
  return out;
}

double top1(const TaskModel& model, const DatasetManifest& dataset, std::int64_t resize) {
  if (!dataset.labeled()) throw ProvenanceError("top-1 accuracy needs a labeled dataset");
  auto predicted = predict(model, dataset, resize);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == *dataset[i].label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

}  // namespace ota

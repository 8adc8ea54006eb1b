// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ota/checkpoint.hpp"
#include "ota/dataset.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"

namespace ota {

/// Small VGG-style CNN standing in for a pretrained foundation backbone.
/// Stage i has width `width << i` (conv, group norm, ReLU, twice); features are
/// globally average pooled.
struct BackboneConfig {
  std::int64_t channels = 3;
  std::int64_t depth = 3;
  std::int64_t width = 32;

  std::int64_t feature_dim() const noexcept { return width << (depth - 1); }
  void validate() const;
};

nlohmann::json to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const nlohmann::json& json, const BackboneConfig& defaults,
                                         const std::string& context);

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& config);
  /// N x C x H x W -> N x feature_dim
  torch::Tensor forward(const torch::Tensor& images);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Backbone);

class TaskNetImpl : public torch::nn::Module {
 public:
  TaskNetImpl(const BackboneConfig& config, std::int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& images) { return head->forward(backbone->forward(images)); }

  Backbone backbone{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(TaskNet);

enum class FreezePolicy { all_trainable, backbone_frozen };

/// Backbone plus linear classification head. Copies share the network; use
/// clone() for an independent model.
class TaskModel {
 public:
  static TaskModel initialize(const BackboneConfig& config, std::int64_t num_classes, SeededRng& rng);
  static TaskModel from_checkpoint(const Checkpoint& checkpoint);
  /// Backbone weights from `checkpoint`, new head drawn from `head_rng`.
  static TaskModel from_backbone(const Checkpoint& checkpoint, std::int64_t num_classes, SeededRng& head_rng);

  Checkpoint to_checkpoint(CheckpointMeta meta) const;
  TaskModel clone() const;

  const BackboneConfig& config() const noexcept { return config_; }
  std::int64_t num_classes() const noexcept { return num_classes_; }
  FreezePolicy freeze_policy() const noexcept { return freeze_; }
  void set_freeze_policy(FreezePolicy policy) noexcept { freeze_ = policy; }

  TaskNetImpl& net() const { return *net_; }

  std::string backbone_checksum() const;
  std::string head_checksum() const;

 private:
  TaskModel(BackboneConfig config, std::int64_t num_classes, std::shared_ptr<TaskNetImpl> net);

  BackboneConfig config_;
  std::int64_t num_classes_ = 0;
  FreezePolicy freeze_ = FreezePolicy::all_trainable;
  std::shared_ptr<TaskNetImpl> net_;
};

/// Pooled backbone features of every record (eval input pipeline), N x feature_dim.
torch::Tensor extract_backbone_features(const TaskModel& model, const DatasetManifest& dataset,
                                        std::int64_t resize);
/// Predicted class per record; ties resolve to the lowest class index.
std::vector<std::int64_t> predict(const TaskModel& model, const DatasetManifest& dataset, std::int64_t resize);
/// Fraction of labeled records predicted correctly.
double top1(const TaskModel& model, const DatasetManifest& dataset, std::int64_t resize);

}  // namespace ota

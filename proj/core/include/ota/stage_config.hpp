// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ota {

enum class OptimizerKind { sgd_nesterov, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd_nesterov;
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

/// Multi-step decay: lr(t) = initial * decay^(number of milestones reached).
/// Milestones are fractions of the total step count; milestone m is reached
/// at step round(m * steps).
struct LrSchedule {
  double initial = 0.1;
  std::vector<double> milestones{0.6, 0.9};
  double decay = 0.1;

  double lr_at(std::int64_t step, std::int64_t total_steps) const;
  /// Same schedule with a different initial value (used by grid trials).
  LrSchedule with_initial(double lr) const;
};

struct InputPipeline {
  /// Side length every image is resized to before cropping.
  std::int64_t resize = 32;
  /// Side of the random square crop taken from the resized image at train time.
  std::int64_t crop = 28;
};

/// Optimizer, schedule, grid-search and input settings for one training stage.
struct StageConfig {
  std::int64_t steps = 500;
  std::int64_t batch_size = 64;
  OptimizerConfig optimizer;
  LrSchedule lr_schedule;
  /// Sorted descending, non-empty.
  std::vector<double> lr_grid;
  std::vector<double> wd_grid;
  InputPipeline input;

  /// Throws ValidationError when an invariant is broken.
  void validate() const;
  /// Like validate() but allows steps == 0 (used for "no training" checks).
  void validate_allow_zero_steps() const;
};

nlohmann::json to_json(const StageConfig& config);
/// Starts from `defaults` and applies the keys present in `json`; unknown keys are rejected.
StageConfig stage_config_from_json(const nlohmann::json& json, const StageConfig& defaults,
                                   const std::string& context);

}  // namespace ota

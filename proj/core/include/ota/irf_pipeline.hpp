// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/checkpoint.hpp"
#include "ota/dataset.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"
#include "ota/task_model.hpp"

namespace ota::irf {

/// n logarithmically spaced values spanning [lo, hi] inclusive, largest first.
std::vector<double> make_lr_grid(double lo, double hi, std::int64_t n);

/// Delivering (stage 3): frozen backbone, head-only, lr grid {1, 1e-1, 1e-2, 1e-3}, wd 1e-5.
StageConfig default_stage3_config();
/// Calibration (stage 4): all parameters, lr grid 1e-2..1e-5 (4), wd grid 1e-3..1e-5 (3).
StageConfig default_stage4_config();
/// Linear-probe / fine-tune baselines: stage-4 settings with more steps.
StageConfig default_baseline_config();
/// Supervised upstream training of the backbone stand-in.
StageConfig default_pretrain_config();

struct GridTrial {
  double lr = 0.0;
  double wd = 0.0;
  /// Validation top-1; NaN when the trial diverged.
  double val_metric = 0.0;
  bool diverged = false;
};

/// Trials in evaluation order (lr outer, wd inner). The winner is the first
/// trial reaching the maximum validation metric.
struct GridSearchResult {
  std::vector<GridTrial> trials;
  std::size_t winner = 0;

  const GridTrial& winner_trial() const { return trials.at(winner); }
};

nlohmann::json to_json(const GridSearchResult& result);

struct TrainTrace {
  std::vector<double> lr;
  std::vector<double> loss;
};

/// Trains `model` in place for stage.steps with cross-entropy. When the model's
/// freeze policy is backbone_frozen only the head is optimised and the backbone
/// runs without gradients.
TrainTrace train_classifier(TaskModel& model, const DatasetManifest& train, const StageConfig& stage, double lr,
                            double weight_decay, SeededRng& rng);

struct StageOptions {
  double val_fraction = 0.2;
  /// Accept data whose provenance differs from the stage's default (ablations).
  bool allow_provenance_override = false;
  /// Parallel grid trials.
  int jobs = 1;
};

struct StageOutput {
  Checkpoint checkpoint;
  GridSearchResult grid;
  /// Learning-rate and loss trace of the winning trial.
  TrainTrace trace;
};

/// Grid search over stage.lr_grid x stage.wd_grid on a seeded hold-out split.
/// The split comes from rng.derive("holdout"); trial t trains with
/// rng.derive(stage_name + "/trial/" + t).
StageOutput grid_search(const TaskModel& start, const DatasetManifest& data, const StageConfig& stage, SeededRng& rng,
                        const std::string& stage_name, const StageOptions& options);

/// Stage 3: train only the task head on re-represented data with the backbone fixed.
StageOutput stage3_deliver(const TaskModel& model, const DatasetManifest& rerep, const StageConfig& stage,
                           SeededRng& rng, const StageOptions& options = {});

/// Stage 4: fine-tune every parameter on original downstream data.
StageOutput stage4_calibrate(const TaskModel& warm, const DatasetManifest& original, const StageConfig& stage,
                             SeededRng& rng, const StageOptions& options = {});

enum class DataChoice { original, re_represented };

std::string_view to_string(DataChoice choice) noexcept;
DataChoice data_choice_from_string(std::string_view text);

struct IrfOptions {
  StageConfig stage3 = default_stage3_config();
  StageConfig stage4 = default_stage4_config();
  /// Table-4 style ablations: (a) delivering = original; (c) calibration = re_represented.
  DataChoice delivering = DataChoice::re_represented;
  DataChoice calibration = DataChoice::original;
  double val_fraction = 0.2;
  int jobs = 1;
  /// When set, checkpoints, reports and lr traces are written here.
  std::optional<std::filesystem::path> output_dir;
};

struct IrfResult {
  DatasetManifest rerepresented;
  Checkpoint stage2;
  StageOutput stage3;
  StageOutput stage4;
  nlohmann::json report;
};

/// Stage 2 -> 3 -> 4. Failures are rethrown as StageError naming the stage.
IrfResult run_irf(const Checkpoint& backbone, const DatasetManifest& downstream, const Checkpoint& vq,
                  const IrfOptions& options, SeededRng& rng);

/// Frozen backbone, new head, original data, stage-4 grid.
StageOutput linear_probe(const Checkpoint& backbone, const DatasetManifest& data, const StageConfig& stage,
                         SeededRng& rng, const StageOptions& options = {});
/// All parameters trainable, original data, stage-4 grid.
StageOutput finetune(const Checkpoint& backbone, const DatasetManifest& data, const StageConfig& stage,
                     SeededRng& rng, const StageOptions& options = {});

/// {method, dataset, top1, winner_lr, winner_wd, grid}
nlohmann::json baseline_report(const std::string& method, const std::string& dataset, double top1,
                               const StageOutput& output);

/// Writes `<dir>/<stage>.lr_trace.tsv` and `<dir>/<stage>.report.json` with
/// {stage, config, seed, metrics, lr_trace_path}.
nlohmann::json write_stage_report(const std::filesystem::path& dir, const std::string& stage,
                                  const StageConfig& config, std::uint64_t seed, const nlohmann::json& metrics,
                                  const TrainTrace& trace);

/// Upstream supervised training of the backbone stand-in ("foundation" model).
Checkpoint pretrain_backbone(const DatasetManifest& upstream, const BackboneConfig& config, const StageConfig& stage,
                             SeededRng& rng);

}  // namespace ota::irf

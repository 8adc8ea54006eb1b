// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ota/digg.hpp"
#include "ota/distiller.hpp"
#include "ota/irf_pipeline.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/stage_config.hpp"
#include "ota/synthetic.hpp"
#include "ota/task_model.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::cli {

struct DataSection {
  /// "synthetic" builds the two-domain shapes task; "directory" loads the paths below.
  std::string source = "synthetic";
  std::string upstream;
  std::string downstream;
  std::string test;
  std::string name = "shapes_b";
  /// Few-shot subsample of the downstream training set (1.0 keeps all of it).
  double few_fraction = 1.0;
  bool stratified = false;
  synth::ShapesConfig upstream_shapes{512, 4, 32, 0.03, "up"};
  synth::ShapesConfig downstream_shapes{160, 4, 32, 0.03, "down"};
  synth::ShapesConfig test_shapes{160, 4, 32, 0.03, "test"};
};

struct VqSection {
  vq::VqConfig model;
  StageConfig train;
};

struct LtSection {
  lt::LtConfig model;
  StageConfig train;
  lt::SamplingParams sampling;
};

struct BackboneSection {
  BackboneConfig model;
  StageConfig pretrain;
};

struct IrfSection {
  StageConfig stage3;
  StageConfig stage4;
  StageConfig baseline;
  irf::DataChoice delivering = irf::DataChoice::re_represented;
  irf::DataChoice calibration = irf::DataChoice::original;
  double val_fraction = 0.2;
};

struct DiggSection {
  digg::MaskSpec mask;
  std::int64_t target_count = 5000;
  std::int64_t contact_sheet_rows = 8;
};

struct DistillSection {
  distill::DistillConfig config;
  BackboneConfig student;
  distill::StudentInit student_init = distill::StudentInit::random;
  StageConfig finetune;
  bool lp_then_ft = false;
};

struct MetricsSection {
  /// Evaluation resize for top-1 and feature extraction.
  std::int64_t resize = 32;
};

struct SeedsSection {
  std::uint64_t master = 0;
};

/// Whole-run configuration. Every field has a default; JSON documents override
/// fields section by section and unknown keys are rejected.
struct RunConfig {
  DataSection data;
  VqSection vq;
  LtSection lt;
  BackboneSection backbone;
  IrfSection irf;
  DiggSection digg;
  DistillSection distill;
  MetricsSection metrics;
  SeedsSection seeds;
  std::string output_dir = "runs/default";

  void validate() const;
};

RunConfig default_run_config();
nlohmann::json to_json(const RunConfig& config);
/// Overlays `json` on `base`.
RunConfig run_config_from_json(const nlohmann::json& json, const RunConfig& base);

/// Sets one dotted key ("irf.stage4.steps") in a JSON document from a flag
/// value; the value is parsed as JSON when possible, else taken as a string.
void set_dotted(nlohmann::json& doc, const std::string& dotted_key, const std::string& value);

/// Defaults, then the config file (if any), then flag overrides. The manifest
/// entry records each layer so the precedence is auditable.
struct ResolvedConfig {
  RunConfig config;
  nlohmann::json layers;
};
ResolvedConfig resolve_config(const std::filesystem::path& config_file, const nlohmann::json& flag_overrides);

}  // namespace ota::cli

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/checkpoint.hpp"
#include "ota/dataset.hpp"
#include "ota/digg.hpp"
#include "ota/irf_pipeline.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"
#include "ota/task_model.hpp"

namespace ota::distill {

/// Feature-level L2 distillation settings. lr 1.0 is the reference setting;
/// the small default networks collapse to the mean feature above ~0.03 and are
/// trained at 0.003.
struct DistillConfig {
  std::int64_t epochs = 70;
  std::int64_t batch_size = 64;
  double lr = 0.003;
  double weight_decay = 1e-5;
  double momentum = 0.9;
  InputPipeline input;
  /// With use_adapter = false a student/teacher width mismatch is an error.
  bool use_adapter = true;

  void validate() const;
};

nlohmann::json to_json(const DistillConfig& config);
DistillConfig distill_config_from_json(const nlohmann::json& json, const DistillConfig& defaults,
                                       const std::string& context);

/// Linear map from student to teacher feature width; identity (no parameters)
/// when the widths match.
class FeatureAdapterImpl : public torch::nn::Module {
 public:
  FeatureAdapterImpl(std::int64_t student_dim, std::int64_t teacher_dim);
  torch::Tensor forward(const torch::Tensor& features);
  bool identity() const noexcept { return linear.is_empty(); }

  torch::nn::Linear linear{nullptr};
  std::int64_t student_dim = 0;
  std::int64_t teacher_dim = 0;
};
TORCH_MODULE(FeatureAdapter);

struct DistillResult {
  /// Student task checkpoint (backbone updated, head unchanged). No adapter weights.
  Checkpoint student;
  /// Adapter weights and dimensions, kept for reproducibility.
  Checkpoint adapter;
  std::vector<double> epoch_losses;
  /// Loss and largest absolute gradient entry of the very first batch.
  double initial_loss = 0.0;
  double initial_max_abs_grad = 0.0;
  std::string teacher_checksum_before;
  std::string teacher_checksum_after;
};

/// Minimises mean_i |adapter(f_student(x_i)) - f_teacher(x_i)|^2 over `corpus`
/// (pseudo or original provenance). Teacher features are computed under no-grad
/// from the same input batch as the student's.
DistillResult distill(const Checkpoint& teacher, const TaskModel& student, const DatasetManifest& corpus,
                      const DistillConfig& config, SeededRng& rng);

struct FinetuneOptions {
  /// Linear probe first, then fine-tune every parameter from the probe winner.
  bool lp_then_ft = false;
  int jobs = 1;
  double val_fraction = 0.2;
};

/// Full fine-tune of the distilled student on original data with the stage-4 grid.
/// Pseudo or re-represented data is rejected with ProvenanceError.
irf::StageOutput final_finetune(const Checkpoint& student, const DatasetManifest& few_data,
                                const StageConfig& stage, SeededRng& rng, const FinetuneOptions& options = {});

enum class OtaOrder { irf_then_digg, digg_then_irf };
std::string_view to_string(OtaOrder order) noexcept;
OtaOrder ota_order_from_string(std::string_view text);

enum class StudentInit { random, upstream };
std::string_view to_string(StudentInit init) noexcept;
StudentInit student_init_from_string(std::string_view text);

struct OtaInputs {
  Checkpoint teacher;  // upstream-trained backbone
  Checkpoint vq;
  Checkpoint lt;
  DatasetManifest downstream;  // few-shot original data
  std::optional<DatasetManifest> test;
  /// Required when student_init == upstream.
  std::optional<Checkpoint> student_upstream;
  std::string dataset_name = "downstream";
};

struct OtaOptions {
  irf::IrfOptions irf;
  StageConfig finetune = irf::default_stage4_config();
  FinetuneOptions finetune_options;
  std::int64_t target_count = 5000;
  digg::DistillSetOptions digg;
  DistillConfig distill;
  BackboneConfig student;
  StudentInit student_init = StudentInit::random;
  std::optional<std::filesystem::path> output_dir;
};

struct OtaResult {
  Checkpoint final_model;
  nlohmann::json report;
};

/// irf_then_digg: run_irf(teacher) -> build_distill_set -> distill -> final_finetune.
/// digg_then_irf: build_distill_set -> distill(raw teacher) -> run_irf(student).
/// Stage failures surface as StageError.
OtaResult run_ota(OtaOrder order, const OtaInputs& inputs, const OtaOptions& options, SeededRng& rng);

/// Comparison table: one row per report (method = order), one column per
/// dataset, then the average. Reports carry {order, dataset, top1}.
std::string comparison_tsv(const std::vector<nlohmann::json>& reports);

}  // namespace ota::distill

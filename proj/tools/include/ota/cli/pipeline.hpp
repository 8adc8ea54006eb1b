// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ota/checkpoint.hpp"
#include "ota/cli/run_config.hpp"
#include "ota/dataset.hpp"

namespace ota::cli {

/// SHA-256 over ids, labels and pixel bytes, in record order.
std::string dataset_digest(const DatasetManifest& d);

/// `<root>/<stage>-<first 12 hex chars of sha256(key.dump())>`.
std::filesystem::path stage_dir(const std::filesystem::path& root, const std::string& stage,
                                const nlohmann::json& key);

struct RunDatasets {
  DatasetManifest upstream;
  /// Few-shot downstream training data (original provenance).
  DatasetManifest downstream;
  std::optional<DatasetManifest> test;
};

/// Synthetic: domain a upstream, domain b downstream/test, streams "data/<role>"
/// of the master seed. Directory: loaded from the configured paths. The few-shot
/// subsample uses stream "data/few".
RunDatasets load_run_datasets(const RunConfig& config);

struct PrimeArtifacts {
  Checkpoint vq;
  Checkpoint lt;
  Checkpoint backbone;
  /// Upstream-trained student backbone, present when distill.student_init = upstream.
  std::optional<Checkpoint> student_backbone;
  std::filesystem::path dir;
  bool reused = false;
};

/// Stage 1 plus upstream backbone training, stored under a content-addressed
/// directory of `root`. Existing artifacts with the same key are loaded instead
/// of retrained. Streams: "prime_vq", "prime_lt", "pretrain", "pretrain_student".
PrimeArtifacts prime_all(const RunConfig& config, const DatasetManifest& upstream, const std::filesystem::path& root);

/// Translates the run configuration into the library options for one ordering.
distill::OtaOptions ota_options(const RunConfig& config, int jobs);

/// Appends {path, sha256} entries and writes `<dir>/manifest.json`.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json config_layers, const RunConfig& config);
  void add(const std::filesystem::path& path);
  void add_note(const std::string& key, nlohmann::json value) { notes_[key] = std::move(value); }
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  nlohmann::json layers_;
  nlohmann::json config_;
  nlohmann::json notes_ = nlohmann::json::object();
  std::vector<std::filesystem::path> artifacts_;
};

}  // namespace ota::cli

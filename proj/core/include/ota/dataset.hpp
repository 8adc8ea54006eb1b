// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <torch/types.h>

#include "ota/rng.hpp"

namespace ota {

enum class Provenance { original, re_represented, pseudo };

std::string_view to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view text);

struct ImageShape {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;

  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct ImageRecord {
  /// H x W x C float32 in [0, 1].
  torch::Tensor pixels;
  /// Absent only for pseudo (distillation) data.
  std::optional<std::int64_t> label;
  std::string id;
  /// Lineage for generated records.
  std::optional<std::string> source_id;
};

/// Ordered, validated collection of image records with lineage information.
///
/// Immutable after construction. Pixel tensors are shared, not copied, between
/// manifests derived from one another; nothing in the library writes to them.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::vector<ImageRecord> records, std::int64_t num_classes, Provenance provenance,
                  std::optional<std::uint64_t> source_seed = std::nullopt);

  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  const ImageRecord& operator[](std::size_t i) const { return records_.at(i); }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::int64_t num_classes() const noexcept { return num_classes_; }
  Provenance provenance() const noexcept { return provenance_; }
  std::optional<std::uint64_t> source_seed() const noexcept { return source_seed_; }
  /// Shape shared by every record; all zero for an empty manifest.
  ImageShape shape() const noexcept { return shape_; }
  bool labeled() const noexcept;

  /// Records at `indices`, in the given order, keeping every other attribute.
  DatasetManifest subset(std::span<const std::size_t> indices) const;
  DatasetManifest with_provenance(Provenance p) const;

  /// N x C x H x W batch of the requested records.
  torch::Tensor images(std::span<const std::size_t> indices) const;
  torch::Tensor images() const;
  /// int64 labels; throws ValidationError on unlabeled records.
  torch::Tensor labels(std::span<const std::size_t> indices) const;

 private:
  std::vector<ImageRecord> records_;
  std::int64_t num_classes_ = 0;
  Provenance provenance_ = Provenance::original;
  std::optional<std::uint64_t> source_seed_;
  ImageShape shape_;
};

/// Reads `<root>/<manifest_file>` (TSV with header `id\tpath\tlabel`, optional
/// trailing `source_id` column) and every referenced image. An optional
/// `<root>/dataset.json` supplies num_classes, provenance and source_seed.
DatasetManifest load_dataset(const std::filesystem::path& root,
                             const std::filesystem::path& manifest_file = "manifest.tsv");

/// Writes the layout read by load_dataset: images/<id>.png, manifest.tsv, dataset.json.
void save_dataset(const DatasetManifest& dataset, const std::filesystem::path& root);

/// ceil(fraction * N) records drawn uniformly without replacement, returned in
/// their original order. With `stratified`, the draw is made per class.
DatasetManifest sample_few_data(const DatasetManifest& dataset, double fraction, SeededRng& rng,
                                bool stratified = false);

/// Seeded train/validation split; validation receives max(1, round(N * val_fraction)).
std::pair<DatasetManifest, DatasetManifest> holdout_split(const DatasetManifest& dataset,
                                                          double val_fraction, SeededRng rng);

}  // namespace ota

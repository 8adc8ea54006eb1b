// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ota/dataset.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/nn_utils.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"
#include "ota/task_model.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ota") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path source_dir() {
  if (const char* env = std::getenv("OTA_SOURCE_DIR")) return env;
  return std::filesystem::current_path();
}

/// Uniform-noise images with labels cycling 0..classes-1.
inline DatasetManifest random_dataset(std::int64_t n, std::int64_t classes, std::int64_t side, std::uint64_t seed,
                                      Provenance provenance = Provenance::original, std::int64_t channels = 3) {
  SeededRng rng(seed, "random_dataset");
  std::vector<ImageRecord> records;
  for (std::int64_t i = 0; i < n; ++i) {
    auto px = torch::empty({side, side, channels});
    nn::fill_uniform(px, 0.5, rng);
    px += 0.5;
    std::optional<std::int64_t> label;
    if (provenance != Provenance::pseudo) label = i % classes;
    records.push_back(ImageRecord{px, label, "r" + std::to_string(i), std::nullopt});
  }
  return DatasetManifest(std::move(records), classes, provenance, seed);
}

inline vq::VqConfig tiny_vq() {
  vq::VqConfig c;
  c.image_size = 16;
  c.stride = 4;
  c.hidden = 8;
  c.codebook_size = 16;
  c.code_dim = 4;
  return c;
}

inline lt::LtConfig tiny_lt(std::int64_t vocab = 16, std::int64_t context = 16) {
  lt::LtConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 16;
  c.context = context;
  c.vocab = vocab;
  return c;
}

inline BackboneConfig tiny_backbone(std::int64_t width = 4) {
  BackboneConfig c;
  c.width = width;
  c.depth = 2;
  return c;
}

/// SGD stage with a single-point grid; input pipeline keeps the native size.
inline StageConfig quick_stage(std::int64_t steps, double lr, std::int64_t side = 16, std::int64_t batch = 8) {
  StageConfig c;
  c.steps = steps;
  c.batch_size = batch;
  c.optimizer = {OptimizerKind::sgd_nesterov, 0.9, 1e-5};
  c.lr_schedule = {lr, {0.6, 0.9}, 0.1};
  c.lr_grid = {lr};
  c.wd_grid = {1e-5};
  c.input = {side, side};
  return c;
}

inline StageConfig adam_stage(std::int64_t steps, double lr, std::int64_t batch = 8) {
  StageConfig c = quick_stage(steps, lr, 16, batch);
  c.optimizer = {OptimizerKind::adam, 0.0, 0.0};
  c.wd_grid = {0.0};
  return c;
}

inline bool tensors_bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

}  // namespace ota::testing

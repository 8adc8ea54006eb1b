// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/types.h>

namespace ota {

struct CheckpointMeta {
  std::string stage_name;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string created_at;
  /// Model architecture and anything else needed to rebuild the artifact.
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

/// Named parameter arrays plus metadata. Supported dtypes: float32, float64, int64.
struct Checkpoint {
  std::map<std::string, torch::Tensor> params;
  CheckpointMeta meta;

  const torch::Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params.count(name) != 0; }
};

/// Single-file archive, see docs/checkpoint_format.md.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws IntegrityError when the trailing SHA-256 does not match the content.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Bit-exact comparison of every array (names, dtypes, shapes, bytes) and the metadata.
bool bit_equal(const Checkpoint& a, const Checkpoint& b);

/// SHA-256 over the canonical (sorted-key, compact) JSON dump of `config`.
std::string config_digest(const nlohmann::json& config);

/// SHA-256 over names, shapes and raw bytes of the selected arrays. Arrays whose
/// name does not start with `prefix` are skipped.
std::string params_checksum(const std::map<std::string, torch::Tensor>& params,
                            const std::string& prefix = "");

/// UTC timestamp; honours SOURCE_DATE_EPOCH for reproducible artifacts.
std::string timestamp_now();

}  // namespace ota

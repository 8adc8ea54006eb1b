// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/types.h>

#include "ota/dataset.hpp"
#include "ota/grid.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/rng.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::digg {

/// `none` masks nothing and reproduces the re-represented image.
enum class MaskScheme { none, bottom_half, top_half, random_rows, random_block };

std::string_view to_string(MaskScheme scheme) noexcept;
MaskScheme mask_scheme_from_string(std::string_view text);

/// Token-level mask recipe. bottom_half / top_half ignore `ratio`.
/// random_rows masks floor(ratio*h*w) / w whole rows starting at a random row;
/// random_block masks a run of floor(ratio*h*w) raster cells at a random offset.
struct MaskSpec {
  MaskScheme scheme = MaskScheme::bottom_half;
  double ratio = 0.5;

  bool randomized() const noexcept {
    return scheme == MaskScheme::random_rows || scheme == MaskScheme::random_block;
  }
  void validate() const;
  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;
};

nlohmann::json to_json(const MaskSpec& spec);
MaskSpec mask_spec_from_json(const nlohmann::json& json, const MaskSpec& defaults, const std::string& context);

/// true = masked. Masked cells always form one contiguous run in raster order.
MaskGrid make_mask(std::int64_t height, std::int64_t width, const MaskSpec& spec, SeededRng& rng);

/// Throws ValidationError unless the masked cells form one contiguous raster run
/// (an empty mask is accepted).
void check_mask_fillable(const MaskGrid& mask);

struct PseudoImage {
  torch::Tensor pixels;  // H x W x C
  std::string source_id;
  MaskSpec mask_used;
  MaskGrid mask;
  TokenGrid source_tokens;
  TokenGrid tokens;
  std::int64_t variant_index = 0;
};

struct GenerationOptions {
  MaskSpec mask;
  lt::SamplingParams sampling;
};

/// Variant v of record `x` draws from rng.derive(x.id + "/" + v): the mask from
/// its "mask" child and completions from its "sample" child.
std::vector<PseudoImage> generate_pseudo(const ImageRecord& x, std::int64_t n_variants, const vq::VqTokenizer& vq,
                                         const lt::LatentTransformer& lt, const GenerationOptions& options,
                                         SeededRng& rng, std::int64_t first_variant = 0);

struct DistillSetOptions {
  GenerationOptions generation;
  int jobs = 1;
  /// When set, a contact sheet (source column, then variants) is written here.
  std::filesystem::path contact_sheet;
  std::int64_t contact_sheet_rows = 8;
};

/// ceil(target/|d|) variants per source, visited variant-major (every source gets
/// variant 0 before any gets variant 1) and truncated to exactly `target_count`.
/// Ids are "<source id>__v<k>"; output is unlabeled with provenance pseudo.
DatasetManifest build_distill_set(const DatasetManifest& d, std::int64_t target_count, const vq::VqTokenizer& vq,
                                  const lt::LatentTransformer& lt, const DistillSetOptions& options, SeededRng& rng);

}  // namespace ota::digg

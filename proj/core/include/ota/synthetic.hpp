// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "ota/dataset.hpp"
#include "ota/rng.hpp"

namespace ota::synth {

/// Domain a: warm shapes on dark, flat backgrounds.
/// Domain b: cool shapes on light, striped backgrounds.
/// Domain c: cool shapes on dark, flat backgrounds (a palette-only shift from a).
enum class Domain { a, b, c };

std::string_view to_string(Domain domain) noexcept;
Domain domain_from_string(std::string_view text);

/// Shape classes, in label order: disk, square, triangle, ring, cross, bar.
constexpr std::int64_t kMaxClasses = 6;

struct ShapesConfig {
  std::int64_t count = 512;
  std::int64_t num_classes = 4;
  std::int64_t image_size = 32;
  double noise = 0.03;
  /// Record ids are "<id_prefix>_<index, zero padded>".
  std::string id_prefix = "img";

  void validate() const;
};

/// Labels cycle 0..num_classes-1; record i draws from rng.derive(std::to_string(i)).
DatasetManifest make_shapes(Domain domain, const ShapesConfig& config, SeededRng& rng);

}  // namespace ota::synth

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

namespace ota::plot {

/// Tiles H x W x C images into a grid with a 2 px white gutter. Rows may have
/// different lengths; missing cells stay white.
torch::Tensor tile_images(const std::vector<std::vector<torch::Tensor>>& rows);
void write_contact_sheet(const std::filesystem::path& path, const std::vector<std::vector<torch::Tensor>>& rows);

struct Bar {
  std::string label;
  double value = 0.0;
};

/// Plain bar chart PNG, values scaled to [0, max(values)]. Labels are not drawn;
/// bars appear in the given order.
void write_bar_chart(const std::filesystem::path& path, const std::vector<Bar>& bars, std::int64_t height = 120);

}  // namespace ota::plot

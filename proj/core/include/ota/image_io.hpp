// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <torch/types.h>

namespace ota {

/// Decodes a PNG into an H x W x C float32 tensor scaled to [0, 1]. Palette
/// images expand to RGB, alpha is dropped, 16-bit samples are reduced to 8.
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes an H x W x C tensor (C in {1, 3}) with values in [0, 1] as 8-bit PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels);

}  // namespace ota

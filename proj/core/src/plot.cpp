// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/plot.hpp"

#include <algorithm>

#include "ota/error.hpp"
#include "ota/image_io.hpp"

namespace ota::plot {

namespace {
constexpr std::int64_t kGutter = 2;
}

torch::Tensor tile_images(const std::vector<std::vector<torch::Tensor>>& rows) {
  std::int64_t h = 0, w = 0, c = 0;
  std::size_t cols = 0;
  for (const auto& row : rows) {
    cols = std::max(cols, row.size());
    for (const auto& img : row) {
      if (img.dim() != 3) throw ShapeError("tile_images: expected H x W x C images");
      if (h == 0) {
        h = img.size(0);
        w = img.size(1);
        c = img.size(2);
      } else if (img.size(0) != h || img.size(1) != w || img.size(2) != c) {
        throw ShapeError("tile_images: images differ in shape");
      }
    }
  }
  if (h == 0) throw ValidationError("tile_images: nothing to draw");
  const auto n_rows = static_cast<std::int64_t>(rows.size());
  const auto n_cols = static_cast<std::int64_t>(cols);
  auto sheet = torch::ones({n_rows * (h + kGutter) + kGutter, n_cols * (w + kGutter) + kGutter, c});
  for (std::int64_t r = 0; r < n_rows; ++r) {
    for (std::size_t k = 0; k < rows[r].size(); ++k) {
      const auto y = kGutter + r * (h + kGutter);
      const auto x = kGutter + static_cast<std::int64_t>(k) * (w + kGutter);
      sheet.slice(0, y, y + h).slice(1, x, x + w).copy_(rows[r][k].to(torch::kFloat32));
    }
  }
  return sheet;
}

void write_contact_sheet(const std::filesystem::path& path, const std::vector<std::vector<torch::Tensor>>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(path, tile_images(rows));
}

void write_bar_chart(const std::filesystem::path& path, const std::vector<Bar>& bars, std::int64_t height) {
  if (bars.empty()) throw ValidationError("write_bar_chart: no bars");
  constexpr std::int64_t bar_w = 16;
  const auto n = static_cast<std::int64_t>(bars.size());
  double top = 0.0;
  for (const auto& b : bars) top = std::max(top, b.value);
  auto img = torch::ones({height, n * (bar_w + 4) + 4, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    const double frac = top > 0.0 ? std::clamp(bars[i].value / top, 0.0, 1.0) : 0.0;
    const auto bh = static_cast<std::int64_t>(frac * static_cast<double>(height - 4));
    const auto x = 4 + i * (bar_w + 4);
    auto bar = img.slice(0, height - bh, height).slice(1, x, x + bar_w);
    bar.select(2, 0).fill_(0.2 + 0.6 * static_cast<double>(i % 2));
    bar.select(2, 1).fill_(0.4);
    bar.select(2, 2).fill_(0.8 - 0.5 * static_cast<double>(i % 2));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(path, img);
}

}  // namespace ota::plot

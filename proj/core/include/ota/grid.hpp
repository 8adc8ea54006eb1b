// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ota/error.hpp"

namespace ota {

/// Dense row-major h x w grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::int64_t height, std::int64_t width, T fill = T{})
      : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ShapeError("grid dimensions must be non-negative");
    cells_.assign(static_cast<std::size_t>(height * width), fill);
  }
  Grid(std::int64_t height, std::int64_t width, std::vector<T> cells)
      : height_(height), width_(width), cells_(std::move(cells)) {
    if (static_cast<std::int64_t>(cells_.size()) != height * width)
      throw ShapeError("grid cell count does not match h*w");
  }

  std::int64_t height() const noexcept { return height_; }
  std::int64_t width() const noexcept { return width_; }
  std::int64_t area() const noexcept { return height_ * width_; }

  T& at(std::int64_t row, std::int64_t col) { return cells_[index(row, col)]; }
  const T& at(std::int64_t row, std::int64_t col) const { return cells_[index(row, col)]; }
  T& operator[](std::int64_t flat) { return cells_[static_cast<std::size_t>(flat)]; }
  const T& operator[](std::int64_t flat) const { return cells_[static_cast<std::size_t>(flat)]; }

  /// Cells in raster (row-major) order.
  std::span<const T> raster() const noexcept { return cells_; }
  std::span<T> raster() noexcept { return cells_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(std::int64_t row, std::int64_t col) const {
    if (row < 0 || row >= height_ || col < 0 || col >= width_) throw ShapeError("grid index out of range");
    return static_cast<std::size_t>(row * width_ + col);
  }

  std::int64_t height_ = 0;
  std::int64_t width_ = 0;
  std::vector<T> cells_;
};

/// Codebook indices, one per latent cell.
using TokenGrid = Grid<std::int64_t>;
/// true (1) marks a masked cell.
using MaskGrid = Grid<std::uint8_t>;

}  // namespace ota

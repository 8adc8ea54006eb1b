// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "ota/error.hpp"

namespace ota {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp message) { throw LoadError(message); }
void png_warning_handler(png_structp, png_const_charp) {}

class PngReader {
 public:
  PngReader() {
    png_ = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png_) throw LoadError("png: cannot create read struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_read_struct(&png_, nullptr, nullptr);
      throw LoadError("png: cannot create info struct");
    }
  }
  ~PngReader() { png_destroy_read_struct(&png_, &info_, nullptr); }
  PngReader(const PngReader&) = delete;
  PngReader& operator=(const PngReader&) = delete;

  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

class PngWriter {
 public:
  PngWriter() {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png_) throw Error("png: cannot create write struct");
    info_ = png_create_info_struct(png_);
    if (!info_) {
      png_destroy_write_struct(&png_, nullptr);
      throw Error("png: cannot create info struct");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

}  // namespace

torch::Tensor read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw LoadError("cannot open image " + path.string());

  PngReader reader;
  png_init_io(reader.png_, file.get());
  png_read_info(reader.png_, reader.info_);

  const int color_type = png_get_color_type(reader.png_, reader.info_);
  const int bit_depth = png_get_bit_depth(reader.png_, reader.info_);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(reader.png_);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(reader.png_);
  if (png_get_valid(reader.png_, reader.info_, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(reader.png_);
  if (bit_depth == 16) png_set_strip_16(reader.png_);
  if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(reader.png_, reader.info_, PNG_INFO_tRNS))
    png_set_strip_alpha(reader.png_);
  png_read_update_info(reader.png_, reader.info_);

  const auto width = static_cast<std::int64_t>(png_get_image_width(reader.png_, reader.info_));
  const auto height = static_cast<std::int64_t>(png_get_image_height(reader.png_, reader.info_));
  const auto channels = static_cast<std::int64_t>(png_get_channels(reader.png_, reader.info_));
  const auto rowbytes = png_get_rowbytes(reader.png_, reader.info_);
  if (static_cast<std::int64_t>(rowbytes) != width * channels)
    throw LoadError("unsupported PNG layout in " + path.string());

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * rowbytes);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (std::int64_t r = 0; r < height; ++r) rows[static_cast<std::size_t>(r)] = raw.data() + r * rowbytes;
  png_read_image(reader.png_, rows.data());
  png_read_end(reader.png_, nullptr);

  auto bytes = torch::from_blob(raw.data(), {height, width, channels}, torch::kUInt8);
  return bytes.to(torch::kFloat32).div_(255.0f).contiguous();
}

void write_png(const std::filesystem::path& path, const torch::Tensor& pixels) {
  if (pixels.dim() != 3) throw ShapeError("write_png expects an H x W x C tensor");
  const auto height = pixels.size(0);
  const auto width = pixels.size(1);
  const auto channels = pixels.size(2);
  if (channels != 1 && channels != 3) throw ShapeError("write_png supports 1 or 3 channels");

  auto bytes = pixels.detach()
                   .to(torch::kFloat32)
                   .clamp(0.0, 1.0)
                   .mul(255.0f)
                   .add(0.5f)
                   .floor()
                   .to(torch::kUInt8)
                   .contiguous();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot open " + path.string() + " for writing");

  PngWriter writer;
  png_init_io(writer.png_, file.get());
  png_set_IHDR(writer.png_, writer.info_, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(writer.png_, writer.info_);
  auto* base = bytes.data_ptr<std::uint8_t>();
  for (std::int64_t r = 0; r < height; ++r) png_write_row(writer.png_, base + r * width * channels);
  png_write_end(writer.png_, nullptr);
}

}  // namespace ota

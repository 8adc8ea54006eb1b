// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/synthetic.hpp"

#include <array>
#include <cmath>
#include <cstdio>

#include "ota/error.hpp"

namespace ota::synth {

namespace {

using Rgb = std::array<float, 3>;

constexpr std::array<Rgb, 4> kWarm{{{0.95f, 0.25f, 0.15f}, {0.98f, 0.6f, 0.1f}, {0.9f, 0.85f, 0.2f}, {0.85f, 0.3f, 0.5f}}};
constexpr std::array<Rgb, 4> kCool{{{0.15f, 0.35f, 0.9f}, {0.1f, 0.65f, 0.55f}, {0.45f, 0.25f, 0.8f}, {0.2f, 0.7f, 0.9f}}};

bool inside(std::int64_t shape, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 2: return dy <= 0.8 * r && dy >= -r && ax <= (dy + r) * 0.55;
    case 3: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= 0.36 * r * r;
    }
    case 4: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    default: return ax <= r && ay <= 0.35 * r;
  }
}

}  // namespace

std::string_view to_string(Domain domain) noexcept {
  switch (domain) {
    case Domain::a: return "a";
    case Domain::b: return "b";
    default: return "c";
  }
}

Domain domain_from_string(std::string_view text) {
  if (text == "a") return Domain::a;
  if (text == "b") return Domain::b;
  if (text == "c") return Domain::c;
  throw ValidationError("unknown synthetic domain '" + std::string(text) + "' (a | b | c)");
}

void ShapesConfig::validate() const {
  if (count < 1) throw ValidationError("synthetic count must be >= 1");
  if (num_classes < 1 || num_classes > kMaxClasses)
    throw ValidationError("synthetic num_classes must be in [1, " + std::to_string(kMaxClasses) + "]");
  if (image_size < 8) throw ValidationError("synthetic image_size must be >= 8");
  if (noise < 0.0) throw ValidationError("synthetic noise must be >= 0");
}

DatasetManifest make_shapes(Domain domain, const ShapesConfig& config, SeededRng& rng) {
  config.validate();
  const auto side = config.image_size;
  const auto width = std::to_string(config.count - 1).size();
  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(config.count));
  for (std::int64_t i = 0; i < config.count; ++i) {
    auto r = rng.derive(std::to_string(i));
    const std::int64_t label = i % config.num_classes;
    const auto& palette = domain == Domain::a ? kWarm : kCool;
    const Rgb fg = palette[r.uniform_index(palette.size())];
    Rgb bg;
    for (auto& c : bg) c = static_cast<float>(domain == Domain::b ? r.uniform(0.72, 0.92) : r.uniform(0.02, 0.2));
    const double radius = r.uniform(0.22, 0.34) * static_cast<double>(side);
    const double cx = r.uniform(radius, static_cast<double>(side) - radius);
    const double cy = r.uniform(radius, static_cast<double>(side) - radius);
    const double stripe_phase = r.uniform(0.0, 6.283185307179586);

    auto pixels = torch::empty({side, side, 3});
    auto px = pixels.accessor<float, 3>();
    for (std::int64_t y = 0; y < side; ++y) {
      for (std::int64_t x = 0; x < side; ++x) {
        const bool on = inside(label, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, radius);
        double shade = 0.0;
        if (domain == Domain::b && !on) shade = 0.08 * std::sin(0.9 * static_cast<double>(x + y) + stripe_phase);
        for (int c = 0; c < 3; ++c) {
          const double base = on ? fg[c] : bg[c] + shade;
          px[y][x][c] = static_cast<float>(std::clamp(base + config.noise * r.normal(), 0.0, 1.0));
        }
      }
    }
    char id[64];
    std::snprintf(id, sizeof id, "%0*lld", static_cast<int>(width), static_cast<long long>(i));
    records.push_back(ImageRecord{std::move(pixels), label, config.id_prefix + "_" + id, std::nullopt});
  }
  return DatasetManifest(std::move(records), config.num_classes, Provenance::original, rng.seed());
}

}  // namespace ota::synth

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace ota {

/// Deterministic random stream identified by (seed, stream_id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. All derived quantities (bounded integers, reals, normals) are
/// computed here rather than through <random> distributions, which are
/// implementation-defined, so recorded integer draws agree across platforms.
class SeededRng {
 public:
  SeededRng(std::uint64_t seed, std::string stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& stream_id() const noexcept { return stream_id_; }

  /// Child stream keyed by (seed, stream_id + "/" + name). Depends only on the
  /// identity of this stream, never on how many draws it has produced.
  SeededRng derive(std::string_view name) const;

  std::uint64_t next_u64();
  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Real in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::string stream_id_;
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view text) noexcept;
std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace ota

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <map>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ota/digg.hpp"
#include "ota/error.hpp"
#include "ota/image_io.hpp"

namespace ota::digg {
namespace {

std::int64_t masked_count(const MaskGrid& m) {
  std::int64_t c = 0;
  for (auto v : m.raster()) c += v;
  return c;
}

struct Models {
  vq::VqTokenizer vq;
  lt::LatentTransformer lt;
};

Models models(std::uint64_t seed = 1) {
  SeededRng a(seed, "vq");
  SeededRng b(seed, "lt");
  return {vq::VqTokenizer::initialize(testing::tiny_vq(), a), lt::LatentTransformer::initialize(testing::tiny_lt(), b)};
}

GenerationOptions options(MaskSpec mask = {}) {
  GenerationOptions o;
  o.mask = mask;
  o.sampling = {1.0, 16};
  return o;
}

TEST(MakeMask, BottomHalfEightByEight) {
  SeededRng rng(1, "m");
  auto m = make_mask(8, 8, {MaskScheme::bottom_half, 0.9}, rng);
  EXPECT_EQ(masked_count(m), 32);
  for (std::int64_t r = 0; r < 8; ++r)
    for (std::int64_t c = 0; c < 8; ++c) EXPECT_EQ(m.at(r, c), r >= 4 ? 1 : 0);
}

TEST(MakeMask, TopHalfEightByEight) {
  SeededRng rng(1, "m");
  auto m = make_mask(8, 8, {MaskScheme::top_half, 0.1}, rng);
  EXPECT_EQ(masked_count(m), 32);
  for (std::int64_t r = 0; r < 8; ++r) EXPECT_EQ(m.at(r, 3), r < 4 ? 1 : 0);
}

TEST(MakeMask, RandomRowsQuarter) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(seed, "m");
    auto m = make_mask(8, 8, {MaskScheme::random_rows, 0.25}, rng);
    EXPECT_EQ(masked_count(m), 16);
    for (std::int64_t r = 0; r < 8; ++r) {
      std::int64_t row_sum = 0;
      for (std::int64_t c = 0; c < 8; ++c) row_sum += m.at(r, c);
      EXPECT_TRUE(row_sum == 0 || row_sum == 8);
    }
    EXPECT_NO_THROW(check_mask_fillable(m));
  }
}

TEST(MakeMask, RandomBlockCountAndContiguity) {
  std::set<std::int64_t> starts;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SeededRng rng(seed, "m");
    auto m = make_mask(8, 8, {MaskScheme::random_block, 0.3}, rng);
    EXPECT_EQ(masked_count(m), 19);
    EXPECT_NO_THROW(check_mask_fillable(m));
    std::int64_t first = 0;
    while (!m[first]) ++first;
    starts.insert(first);
  }
  EXPECT_GT(starts.size(), 5u);
}

TEST(MakeMask, SeedReplay) {
  for (auto scheme : {MaskScheme::random_rows, MaskScheme::random_block}) {
    SeededRng a(5, "m");
    SeededRng b(5, "m");
    EXPECT_EQ(make_mask(8, 8, {scheme, 0.4}, a), make_mask(8, 8, {scheme, 0.4}, b));
  }
}

TEST(MakeMask, RatioValidation) {
  SeededRng rng(1, "m");
  EXPECT_THROW(make_mask(8, 8, {MaskScheme::random_rows, 0.0}, rng), ValidationError);
  EXPECT_THROW(make_mask(8, 8, {MaskScheme::random_block, 1.0}, rng), ValidationError);
  EXPECT_THROW(make_mask(8, 8, {MaskScheme::random_block, -0.5}, rng), ValidationError);
  EXPECT_THROW(make_mask(0, 8, {}, rng), ShapeError);
}

TEST(MaskSpecJson, RoundTripAndNames) {
  MaskSpec s{MaskScheme::random_block, 0.3};
  EXPECT_EQ(mask_spec_from_json(to_json(s), MaskSpec{}, "mask"), s);
  for (auto scheme : {MaskScheme::none, MaskScheme::bottom_half, MaskScheme::top_half, MaskScheme::random_rows,
                      MaskScheme::random_block})
    EXPECT_EQ(mask_scheme_from_string(to_string(scheme)), scheme);
  EXPECT_THROW(mask_scheme_from_string("checkerboard"), ValidationError);
  EXPECT_THROW(mask_spec_from_json({{"scheme", "none"}, {"size", 2}}, MaskSpec{}, "mask"), ValidationError);
}

TEST(CheckMaskFillable, RejectsScatteredMasks) {
  MaskGrid m(4, 4, 0);
  EXPECT_NO_THROW(check_mask_fillable(m));
  m[3] = 1;
  m[9] = 1;
  EXPECT_THROW(check_mask_fillable(m), ValidationError);
  MaskGrid column(4, 4, 0);
  for (std::int64_t r = 0; r < 4; ++r) column.at(r, 1) = 1;
  EXPECT_THROW(check_mask_fillable(column), ValidationError);
}

TEST(GeneratePseudo, ZeroVariantsIsEmpty) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(1, 2, 16, 1);
  SeededRng rng(1, "g");
  EXPECT_TRUE(generate_pseudo(d[0], 0, vq, lt, options(), rng).empty());
}

TEST(GeneratePseudo, EmptyMaskEqualsRerepresent) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(3, 2, 16, 1);
  auto rerep = vq::rerepresent(d, vq);
  SeededRng rng(1, "g");
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto out = generate_pseudo(d[i], 2, vq, lt, options({MaskScheme::none, 0.5}), rng);
    ASSERT_EQ(out.size(), 2u);
    for (const auto& p : out) EXPECT_TRUE(torch::equal(p.pixels, rerep[i].pixels));
  }
}

TEST(GeneratePseudo, LineageAndDiversity) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(20, 2, 16, 2);
  int differing = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    SeededRng rng(3, "g");
    auto out = generate_pseudo(d[i], 2, vq, lt, options(), rng);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].source_tokens, vq.tokenize(d[i].pixels));
    for (const auto& p : out) {
      EXPECT_EQ(p.source_id, d[i].id);
      for (std::int64_t c = 0; c < p.tokens.area(); ++c)
        if (!p.mask[c]) EXPECT_EQ(p.tokens[c], p.source_tokens[c]);
      EXPECT_TRUE(torch::equal(p.pixels, vq.decode(p.tokens)));
    }
    EXPECT_EQ(out[0].variant_index, 0);
    EXPECT_EQ(out[1].variant_index, 1);
    if (out[0].tokens != out[1].tokens) ++differing;
  }
  EXPECT_GE(differing, 1);
}

TEST(GeneratePseudo, VariantStreamsIndependentOfBatching) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(1, 2, 16, 2);
  SeededRng a(3, "g");
  SeededRng b(3, "g");
  auto all = generate_pseudo(d[0], 3, vq, lt, options({MaskScheme::random_block, 0.4}), a);
  auto last = generate_pseudo(d[0], 1, vq, lt, options({MaskScheme::random_block, 0.4}), b, 2);
  EXPECT_EQ(all[2].tokens, last[0].tokens);
  EXPECT_EQ(all[2].mask, last[0].mask);
}

TEST(GeneratePseudo, VocabularyMismatch) {
  SeededRng a(1, "vq");
  SeededRng b(1, "lt");
  auto vq = vq::VqTokenizer::initialize(testing::tiny_vq(), a);
  auto lt = lt::LatentTransformer::initialize(testing::tiny_lt(8), b);
  auto d = testing::random_dataset(1, 2, 16, 2);
  SeededRng rng(1, "g");
  EXPECT_THROW(generate_pseudo(d[0], 1, vq, lt, options(), rng), ShapeError);
}

TEST(BuildDistillSet, TenSourcesTargetTwentyFive) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(10, 2, 16, 3);
  SeededRng rng(4, "digg");
  auto out = build_distill_set(d, 25, vq, lt, {options(), 1, {}, 8}, rng);
  ASSERT_EQ(out.size(), 25u);
  EXPECT_EQ(out.provenance(), Provenance::pseudo);
  EXPECT_FALSE(out.labeled());
  std::map<std::string, int> per_source;
  for (const auto& r : out.records()) {
    ASSERT_TRUE(r.source_id.has_value());
    EXPECT_FALSE(r.label.has_value());
    ++per_source[*r.source_id];
  }
  EXPECT_EQ(per_source.size(), 10u);
  for (const auto& [id, count] : per_source) EXPECT_TRUE(count == 2 || count == 3) << id;
  EXPECT_EQ(out[0].id, d[0].id + "__v0");
  EXPECT_EQ(out[10].id, d[0].id + "__v1");
  EXPECT_EQ(out[24].id, d[4].id + "__v2");
}

TEST(BuildDistillSet, EmptyMasksAtSourceCountEqualRerepresent) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(6, 2, 16, 3);
  auto rerep = vq::rerepresent(d, vq);
  SeededRng rng(4, "digg");
  auto out = build_distill_set(d, 6, vq, lt, {options({MaskScheme::none, 0.5}), 1, {}, 8}, rng);
  ASSERT_EQ(out.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_TRUE(torch::equal(out[i].pixels, rerep[i].pixels));
}

TEST(BuildDistillSet, ReplayAndParallelAreBitIdentical) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(5, 2, 16, 3);
  SeededRng a(4, "digg");
  SeededRng b(4, "digg");
  auto serial = build_distill_set(d, 12, vq, lt, {options({MaskScheme::random_rows, 0.5}), 1, {}, 8}, a);
  auto parallel = build_distill_set(d, 12, vq, lt, {options({MaskScheme::random_rows, 0.5}), 3, {}, 8}, b);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    EXPECT_EQ(serial[i].id, parallel[i].id);
    EXPECT_TRUE(torch::equal(serial[i].pixels, parallel[i].pixels));
  }
  EXPECT_EQ(serial.source_seed(), std::optional<std::uint64_t>(4));
}

TEST(BuildDistillSet, Errors) {
  auto [vq, lt] = models();
  SeededRng rng(4, "digg");
  EXPECT_THROW(build_distill_set(DatasetManifest(), 5, vq, lt, {}, rng), ValidationError);
  auto d = testing::random_dataset(5, 2, 16, 3);
  EXPECT_THROW(build_distill_set(d, 4, vq, lt, {}, rng), ValidationError);
}

TEST(BuildDistillSet, WritesContactSheet) {
  auto [vq, lt] = models();
  auto d = testing::random_dataset(3, 2, 16, 3);
  testing::TempDir dir;
  SeededRng rng(4, "digg");
  DistillSetOptions o{options(), 1, dir / "sheet.png", 2};
  build_distill_set(d, 6, vq, lt, o, rng);
  auto sheet = read_png(dir / "sheet.png");
  // 2 rows of (source + 2 variants), 16 px tiles with 2 px gutters.
  EXPECT_EQ(sheet.size(0), 2 * 16 + 3 * 2);
  EXPECT_EQ(sheet.size(1), 3 * 16 + 4 * 2);
}

}  // namespace
}  // namespace ota::digg

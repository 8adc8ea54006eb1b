// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <map>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ota/error.hpp"
#include "ota/latent_transformer.hpp"

namespace ota::lt {
namespace {

using testing::tiny_lt;

std::int64_t argmax_lowest(const std::vector<float>& v) {
  std::int64_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<std::int64_t>(i);
  return best;
}

LatentTransformer fresh(const LtConfig& c = tiny_lt(), std::uint64_t seed = 1) {
  SeededRng rng(seed, "lt_test");
  return LatentTransformer::initialize(c, rng);
}

// Constant sequences: token k is always followed by token k.
std::vector<TokenGrid> repeat_corpus(std::int64_t vocab) {
  std::vector<TokenGrid> corpus;
  for (int copy = 0; copy < 4; ++copy)
    for (std::int64_t k = 0; k < vocab; ++k) corpus.emplace_back(4, 4, k);
  return corpus;
}

class ToyTransformer : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto corpus = repeat_corpus(8);
    SeededRng rng(3, "train_lt");
    ckpt_ = new Checkpoint(train_lt(corpus, tiny_lt(8), testing::adam_stage(150, 3e-3), rng, &log_));
  }
  static void TearDownTestSuite() { delete ckpt_; }
  static LatentTransformer model() { return LatentTransformer::from_checkpoint(*ckpt_); }
  static Checkpoint* ckpt_;
  static LtTrainLog log_;
};
Checkpoint* ToyTransformer::ckpt_ = nullptr;
LtTrainLog ToyTransformer::log_;

TEST_F(ToyTransformer, LearnsRepeatRule) {
  auto m = model();
  for (std::int64_t k = 0; k < 8; ++k) {
    std::vector<std::int64_t> prefix{k};
    EXPECT_EQ(argmax_lowest(m.next_logits(prefix)), k) << "after " << k;
    std::vector<std::int64_t> longer(7, k);
    EXPECT_EQ(argmax_lowest(m.next_logits(longer)), k) << "after 7x " << k;
  }
  EXPECT_LT(log_.losses.back(), log_.losses.front());
}

TEST_F(ToyTransformer, GreedyCompletionMatchesStepwiseOracle) {
  auto m = model();
  SeededRng data_rng(5, "grids");
  for (int trial = 0; trial < 5; ++trial) {
    TokenGrid partial(4, 4);
    MaskGrid mask(4, 4, 0);
    for (std::int64_t i = 0; i < 16; ++i) {
      partial[i] = static_cast<std::int64_t>(data_rng.uniform_index(8));
      mask[i] = data_rng.uniform() < 0.5 ? 1 : 0;
    }
    SeededRng rng(trial, "complete");
    auto got = complete_tokens(partial, mask, m, SamplingParams{1e-3, 1}, rng);
    std::vector<std::int64_t> oracle(partial.raster().begin(), partial.raster().end());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      if (!mask[static_cast<std::int64_t>(i)]) continue;
      oracle[i] = argmax_lowest(m.next_logits(std::span(oracle).subspan(0, i)));
    }
    EXPECT_EQ(std::vector<std::int64_t>(got.raster().begin(), got.raster().end()), oracle);
  }
}

TEST_F(ToyTransformer, SeedReplayAndPrefixPreservation) {
  auto m = model();
  TokenGrid partial(4, 4, 3);
  MaskGrid mask(4, 4, 0);
  for (std::int64_t i = 8; i < 16; ++i) {
    mask[i] = 1;
    partial[i] = -1;
  }
  SamplingParams sp{1.0, 8};
  SeededRng a(11, "complete");
  SeededRng b(11, "complete");
  auto x = complete_tokens(partial, mask, m, sp, a);
  auto y = complete_tokens(partial, mask, m, sp, b);
  EXPECT_EQ(x, y);
  for (std::int64_t i = 0; i < 16; ++i) {
    if (!mask[i]) EXPECT_EQ(x[i], partial[i]);
    EXPECT_GE(x[i], 0);
    EXPECT_LT(x[i], 8);
  }
}

TEST(LatentTransformer, ZeroStepsEqualsInitialization) {
  auto corpus = repeat_corpus(16);
  SeededRng rng(9, "train_lt");
  auto ckpt = train_lt(corpus, tiny_lt(), testing::adam_stage(0, 1e-3), rng);
  auto init_rng = rng.derive("init");
  auto init = LatentTransformer::initialize(tiny_lt(), init_rng).to_checkpoint({});
  ASSERT_EQ(ckpt.params.size(), init.params.size());
  for (const auto& [name, t] : init.params) EXPECT_TRUE(testing::tensors_bit_equal(ckpt.at(name), t)) << name;
}

TEST(LatentTransformer, CausalMaskExact) {
  auto m = fresh();
  SeededRng rng(2, "seq");
  std::vector<std::int64_t> seq(16);
  for (auto& t : seq) t = static_cast<std::int64_t>(rng.uniform_index(16));
  auto base = m.sequence_logits(seq);
  for (std::size_t j = 1; j < seq.size(); j += 3) {
    auto changed = seq;
    changed[j] = (changed[j] + 7) % 16;
    auto other = m.sequence_logits(changed);
    // Row i scores position i given positions < i, so rows 0..j are unaffected.
    EXPECT_TRUE(torch::equal(base.slice(0, 0, static_cast<std::int64_t>(j) + 1),
                             other.slice(0, 0, static_cast<std::int64_t>(j) + 1)))
        << "perturbed position " << j;
    EXPECT_FALSE(torch::equal(base, other));
  }
}

TEST(LatentTransformer, NextLogitsAgreesWithSequenceLogits) {
  auto m = fresh();
  std::vector<std::int64_t> seq{1, 5, 2, 9, 9, 0};
  auto all = m.sequence_logits(seq);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    auto nl = m.next_logits(std::span(seq).subspan(0, i));
    ASSERT_EQ(static_cast<std::int64_t>(nl.size()), 16);
    for (std::size_t v = 0; v < nl.size(); ++v)
      EXPECT_NEAR(nl[v], all[static_cast<std::int64_t>(i)][static_cast<std::int64_t>(v)].item<float>(), 1e-5);
  }
}

TEST(LatentTransformer, NextLogitsFiniteDeterministicAndChecked) {
  auto m = fresh();
  auto empty = m.next_logits({});
  EXPECT_EQ(static_cast<std::int64_t>(empty.size()), 16);
  for (float v : empty) EXPECT_TRUE(std::isfinite(v));
  std::vector<std::int64_t> p{3, 4};
  EXPECT_EQ(m.next_logits(p), m.next_logits(p));
  std::vector<std::int64_t> bad{3, 16};
  EXPECT_THROW(m.next_logits(bad), ValidationError);
  std::vector<std::int64_t> start{m.start_token()};
  EXPECT_THROW(m.next_logits(start), ValidationError);
  std::vector<std::int64_t> full(16, 0);
  EXPECT_THROW(m.next_logits(full), ShapeError);
}

TEST(LatentTransformer, CheckpointRoundTrip) {
  auto m = fresh();
  auto back = LatentTransformer::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(m.to_checkpoint({}))));
  std::vector<std::int64_t> p{1, 2, 3};
  EXPECT_EQ(back.next_logits(p), m.next_logits(p));
  EXPECT_EQ(back.config().layers, 2);
}

TEST(LatentTransformer, ConfigValidation) {
  auto c = tiny_lt();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = tiny_lt();
  auto j = to_json(c);
  EXPECT_EQ(to_json(lt_config_from_json(j, LtConfig{}, "lt")), j);
  j["kv_cache"] = true;
  EXPECT_THROW(lt_config_from_json(j, LtConfig{}, "lt"), ValidationError);
}

TEST(TrainLt, Errors) {
  SeededRng rng(1, "train_lt");
  auto stage = testing::adam_stage(1, 1e-3);
  std::vector<TokenGrid> none;
  EXPECT_THROW(train_lt(none, tiny_lt(), stage, rng), ValidationError);
  std::vector<TokenGrid> wrong_area{TokenGrid(3, 3, 0)};
  EXPECT_THROW(train_lt(wrong_area, tiny_lt(), stage, rng), ShapeError);
  std::vector<TokenGrid> bad_token{TokenGrid(4, 4, 16)};
  EXPECT_THROW(train_lt(bad_token, tiny_lt(), stage, rng), ValidationError);
  std::vector<TokenGrid> mixed{TokenGrid(4, 4, 0), TokenGrid(2, 8, 0)};
  EXPECT_THROW(train_lt(mixed, tiny_lt(), stage, rng), ShapeError);
}

TEST(SampleIndex, TopOneIsArgmaxWithLowIndexTies) {
  SeededRng rng(1, "s");
  std::vector<float> logits{0.1f, 2.0f, -1.0f, 2.0f};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_index(logits, {1.0, 1}, rng), 1);
}

TEST(SampleIndex, ConsumesExactlyOneDraw) {
  SeededRng a(4, "s");
  SeededRng b(4, "s");
  std::vector<float> logits{0.0f, 1.0f, 0.5f};
  sample_index(logits, {1.0, 3}, a);
  b.uniform();
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(SampleIndex, TopKRestrictsSupportAndFollowsSoftmax) {
  SeededRng rng(8, "s");
  std::vector<float> logits{0.0f, std::log(3.0f), -5.0f, 0.0f};
  std::map<std::int64_t, int> counts;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_index(logits, {1.0, 2}, rng)];
  EXPECT_EQ(counts.count(2), 0u);
  EXPECT_EQ(counts.count(3), 0u);
  // Top-2 keeps {1, 0}: probabilities 3/4 and 1/4.
  EXPECT_NEAR(counts[1] / static_cast<double>(n), 0.75, 0.02);
}

TEST(SampleIndex, Validation) {
  SeededRng rng(1, "s");
  std::vector<float> logits{0.0f, 1.0f};
  EXPECT_THROW(sample_index(logits, {0.0, 1}, rng), ValidationError);
  EXPECT_THROW(sample_index(logits, {1.0, 0}, rng), ValidationError);
  EXPECT_THROW(sample_index(logits, {1.0, 3}, rng), ValidationError);
}

TEST(CompleteTokens, AllFalseMaskIsIdentity) {
  auto m = fresh();
  TokenGrid partial(4, 4);
  for (std::int64_t i = 0; i < 16; ++i) partial[i] = (i * 5) % 16;
  SeededRng rng(1, "c");
  EXPECT_EQ(complete_tokens(partial, MaskGrid(4, 4, 0), m, {1.0, 16}, rng), partial);
}

TEST(CompleteTokens, AllTrueMaskIsUnconditional) {
  auto m = fresh();
  SeededRng rng(1, "c");
  auto out = complete_tokens(TokenGrid(4, 4, -5), MaskGrid(4, 4, 1), m, {1.0, 16}, rng);
  for (auto t : out.raster()) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 16);
  }
}

TEST(CompleteTokens, Errors) {
  auto m = fresh();
  SeededRng rng(1, "c");
  EXPECT_THROW(complete_tokens(TokenGrid(4, 4, 0), MaskGrid(2, 8, 0), m, {1.0, 4}, rng), ShapeError);
  EXPECT_THROW(complete_tokens(TokenGrid(2, 2, 0), MaskGrid(2, 2, 0), m, {1.0, 4}, rng), ShapeError);
  TokenGrid bad(4, 4, 0);
  bad[3] = 99;
  EXPECT_THROW(complete_tokens(bad, MaskGrid(4, 4, 0), m, {1.0, 4}, rng), ValidationError);
  EXPECT_THROW(complete_tokens(TokenGrid(4, 4, 0), MaskGrid(4, 4, 1), m, {1.0, 17}, rng), ValidationError);
}

}  // namespace
}  // namespace ota::lt

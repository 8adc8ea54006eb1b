// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ota/error.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::vq {
namespace {

using testing::tiny_vq;

// Brute-force argmin, independent of nearest_codewords: float accumulation in
// long double, strict < so the first minimum wins.
std::int64_t oracle_nearest(const torch::Tensor& v, const torch::Tensor& book) {
  auto vv = v.to(torch::kFloat64);
  auto bb = book.to(torch::kFloat64);
  std::int64_t best = -1;
  long double best_d = 0;
  for (std::int64_t k = 0; k < bb.size(0); ++k) {
    long double d = 0;
    for (std::int64_t c = 0; c < bb.size(1); ++c) {
      const long double diff = vv[c].item<double>() - bb[k][c].item<double>();
      d += diff * diff;
    }
    if (best < 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

VqTokenizer fresh(const VqConfig& config = tiny_vq(), std::uint64_t seed = 1) {
  SeededRng rng(seed, "vq_test");
  return VqTokenizer::initialize(config, rng);
}

TEST(VqConfig, DefaultsAndValidation) {
  VqConfig c;
  EXPECT_EQ(c.image_size, 32);
  EXPECT_EQ(c.stride, 4);
  EXPECT_EQ(c.codebook_size, 256);
  EXPECT_EQ(c.code_dim, 16);
  EXPECT_DOUBLE_EQ(c.beta_commit, 0.25);
  EXPECT_DOUBLE_EQ(c.lambda_rec, 1.0);
  EXPECT_FALSE(c.adversarial);
  c.stride = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c.stride = 64;
  EXPECT_THROW(c.validate(), ValidationError);
  c = VqConfig{};
  c.beta_commit = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(VqConfig, JsonRoundTripRejectsUnknownKeys) {
  VqConfig c = tiny_vq();
  auto j = to_json(c);
  EXPECT_EQ(to_json(vq_config_from_json(j, VqConfig{}, "vq")), j);
  j["perceptual"] = true;
  EXPECT_THROW(vq_config_from_json(j, VqConfig{}, "vq"), ValidationError);
}

TEST(Codebook, EntriesDistinctAndFinite) {
  auto config = tiny_vq();
  config.codebook_size = 64;
  auto tok = fresh(config);
  auto book = tok.codebook();
  ASSERT_EQ(book.sizes(), (std::vector<std::int64_t>{64, config.code_dim}));
  EXPECT_TRUE(torch::isfinite(book).all().item<bool>());
  for (std::int64_t i = 0; i < 64; ++i)
    for (std::int64_t j = i + 1; j < 64; ++j) EXPECT_FALSE(torch::equal(book[i], book[j]));
}

TEST(Encode, ZeroImageThroughZeroBiasFreeEncoderIsZero) {
  auto config = tiny_vq();
  config.bias = false;
  auto tok = fresh(config);
  {
    torch::NoGradGuard g;
    for (auto& p : tok.net().encoder->parameters()) p.zero_();
  }
  auto z = tok.encode(torch::zeros({16, 16, 3}));
  EXPECT_EQ(z.abs().max().item<float>(), 0.0f);
}

TEST(Encode, StrideFourGivesEightByEight) {
  VqConfig config;
  config.hidden = 8;
  config.codebook_size = 16;
  auto tok = fresh(config);
  auto z = tok.encode(torch::rand({32, 32, 3}));
  EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{8, 8, 16}));
  EXPECT_EQ(config.grid_side(), 8);
}

TEST(Encode, DeterministicAndShapeChecked) {
  auto tok = fresh();
  auto x = torch::rand({16, 16, 3});
  EXPECT_TRUE(torch::equal(tok.encode(x), tok.encode(x)));
  EXPECT_THROW(tok.encode(torch::rand({12, 16, 3})), ShapeError);
  EXPECT_THROW(tok.encode(torch::rand({16, 16, 1})), ShapeError);
}

TEST(Quantize, ExactMatchPicksThatEntry) {
  auto book = torch::randn({6, 4});
  auto latents = book[3].reshape({1, 1, 4}).clone();
  auto q = quantize(latents, book);
  EXPECT_EQ(q.tokens.at(0, 0), 3);
  EXPECT_TRUE(torch::equal(q.latents[0][0], book[3]));
}

TEST(Quantize, SingleEntryCodebookGivesZeros) {
  auto book = torch::randn({1, 3});
  auto q = quantize(torch::randn({3, 4, 3}), book);
  for (auto t : q.tokens.raster()) EXPECT_EQ(t, 0);
}

TEST(Quantize, TwoByTwoMatchesOracle) {
  torch::manual_seed(5);
  auto book = torch::randn({5, 3});
  auto latents = torch::randn({2, 2, 3});
  auto q = quantize(latents, book);
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 2; ++j) {
      EXPECT_EQ(q.tokens.at(i, j), oracle_nearest(latents[i][j], book));
      EXPECT_TRUE(torch::equal(q.latents[i][j], book[q.tokens.at(i, j)]));
    }
}

TEST(Quantize, TiesResolveToLowestIndex) {
  auto book = torch::tensor({5.0f, 5.0f, 1.0f, 0.0f, 9.0f, 9.0f, -1.0f, 0.0f, 0.0f, 1.0f}).reshape({5, 2});
  auto q = quantize(torch::zeros({1, 1, 2}), book);
  EXPECT_EQ(q.tokens.at(0, 0), 1);
  auto dup = torch::tensor({3.0f, 3.0f, 0.5f, 0.5f, 0.5f, 0.5f}).reshape({3, 2});
  EXPECT_EQ(quantize(torch::zeros({1, 1, 2}), dup).tokens.at(0, 0), 1);
}

TEST(Quantize, NearestCodewordPropertyOnRandomGrids) {
  SeededRng rng(77, "nearest");
  for (int trial = 0; trial < 30; ++trial) {
    const auto k = 1 + static_cast<std::int64_t>(rng.uniform_index(32));
    const auto d = 1 + static_cast<std::int64_t>(rng.uniform_index(6));
    auto book = torch::empty({k, d});
    auto lat = torch::empty({3, 3, d});
    nn::fill_normal(book, 1.0, rng);
    nn::fill_normal(lat, 1.0, rng);
    auto q = quantize(lat, book);
    auto bd = book.to(torch::kFloat64);
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 3; ++j) {
        const auto t = q.tokens.at(i, j);
        ASSERT_GE(t, 0);
        ASSERT_LT(t, k);
        auto dist = (bd - lat[i][j].to(torch::kFloat64)).pow(2).sum(1);
        EXPECT_LE(dist[t].item<double>(), dist.min().item<double>());
      }
  }
}

TEST(Quantize, Idempotent) {
  torch::manual_seed(9);
  auto book = torch::randn({16, 4});
  auto q1 = quantize(torch::randn({4, 4, 4}), book);
  auto q2 = quantize(q1.latents, book);
  EXPECT_EQ(q1.tokens, q2.tokens);
  EXPECT_TRUE(torch::equal(q1.latents, q2.latents));
}

TEST(Quantize, Errors) {
  auto book = torch::randn({4, 3});
  auto bad = torch::zeros({1, 1, 3});
  bad.index_put_({0, 0, 1}, std::numeric_limits<float>::quiet_NaN());
  EXPECT_THROW(quantize(bad, book), ValidationError);
  EXPECT_THROW(quantize(torch::zeros({1, 1, 2}), book), ShapeError);
  EXPECT_THROW(quantize(torch::zeros({1, 3}), book), ShapeError);
}

TEST(Decode, CompositionalOracle) {
  auto tok = fresh();
  auto x = torch::rand({16, 16, 3});
  auto q = tok.quantize(tok.encode(x));
  auto via_tokens = tok.decode(q.tokens);
  auto via_lookup = tok.decode_latents(tok.lookup(q.tokens));
  auto via_latents = tok.decode_latents(q.latents);
  EXPECT_TRUE(torch::equal(via_tokens, via_lookup));
  EXPECT_TRUE(torch::equal(via_tokens, via_latents));
  EXPECT_EQ(via_tokens.sizes(), x.sizes());
  EXPECT_GE(via_tokens.min().item<float>(), 0.0f);
  EXPECT_LE(via_tokens.max().item<float>(), 1.0f);
}

TEST(Decode, DeterministicAndRangeChecked) {
  auto tok = fresh();
  TokenGrid zeros(4, 4, 0);
  EXPECT_TRUE(torch::equal(tok.decode(zeros), tok.decode(zeros)));
  TokenGrid bad(4, 4, 0);
  bad.at(2, 2) = tok.config().codebook_size;
  EXPECT_THROW(tok.decode(bad), ValidationError);
  bad.at(2, 2) = -1;
  EXPECT_THROW(tok.decode(bad), ValidationError);
  EXPECT_THROW(tok.decode(TokenGrid(3, 4, 0)), ShapeError);
}

class TrainedVq : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new DatasetManifest(testing::random_dataset(24, 2, 16, 3));
    SeededRng rng(4, "train_vq");
    ckpt_ = new Checkpoint(train_vq(*data_, tiny_vq(), testing::adam_stage(40, 3e-3), rng));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete ckpt_;
  }
  static DatasetManifest* data_;
  static Checkpoint* ckpt_;
};
DatasetManifest* TrainedVq::data_ = nullptr;
Checkpoint* TrainedVq::ckpt_ = nullptr;

TEST_F(TrainedVq, OneCellChangeChangesOutput) {
  auto tok = VqTokenizer::from_checkpoint(*ckpt_);
  auto base = tok.tokenize((*data_)[0].pixels);
  auto img = tok.decode(base);
  for (std::int64_t cell = 0; cell < base.area(); cell += 5) {
    auto other = base;
    other[cell] = (other[cell] + 1) % tok.config().codebook_size;
    EXPECT_FALSE(torch::equal(tok.decode(other), img)) << "cell " << cell;
  }
}

TEST_F(TrainedVq, CheckpointRoundTripAndMeta) {
  EXPECT_EQ(ckpt_->meta.stage_name, "prime_vq");
  EXPECT_EQ(ckpt_->meta.seed, 4u);
  EXPECT_EQ(ckpt_->meta.config_digest.size(), 64u);
  auto tok = VqTokenizer::from_checkpoint(deserialize_checkpoint(serialize_checkpoint(*ckpt_)));
  auto ref = VqTokenizer::from_checkpoint(*ckpt_);
  auto x = (*data_)[1].pixels;
  EXPECT_TRUE(torch::equal(tok.decode(tok.tokenize(x)), ref.decode(ref.tokenize(x))));
}

TEST_F(TrainedVq, TrainingIsSeedDeterministic) {
  SeededRng rng(4, "train_vq");
  auto again = train_vq(*data_, tiny_vq(), testing::adam_stage(40, 3e-3), rng);
  for (const auto& [name, t] : ckpt_->params) EXPECT_TRUE(torch::equal(again.at(name), t)) << name;
}

TEST_F(TrainedVq, RerepresentPreservesRecords) {
  auto tok = VqTokenizer::from_checkpoint(*ckpt_);
  auto out = rerepresent(*data_, tok);
  ASSERT_EQ(out.size(), data_->size());
  EXPECT_EQ(out.provenance(), Provenance::re_represented);
  EXPECT_EQ(out.num_classes(), data_->num_classes());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].id, (*data_)[i].id);
    EXPECT_EQ(out[i].label, (*data_)[i].label);
    auto manual = tok.decode(tok.quantize(tok.encode((*data_)[i].pixels)).tokens);
    EXPECT_TRUE(torch::equal(out[i].pixels, manual));
  }
}

TEST_F(TrainedVq, RerepresentDoesNotTouchWeights) {
  auto tok = VqTokenizer::from_checkpoint(*ckpt_);
  const auto before = params_checksum(tok.to_checkpoint({}).params);
  rerepresent(*data_, tok);
  EXPECT_EQ(params_checksum(tok.to_checkpoint({}).params), before);
}

TEST(TrainVq, ZeroStepsEqualsInitialization) {
  auto data = testing::random_dataset(8, 2, 16, 3);
  SeededRng rng(12, "train_vq");
  auto stage = testing::adam_stage(0, 1e-3);
  auto ckpt = train_vq(data, tiny_vq(), stage, rng);
  auto init_rng = rng.derive("init");
  auto init = VqTokenizer::initialize(tiny_vq(), init_rng).to_checkpoint({});
  ASSERT_EQ(ckpt.params.size(), init.params.size());
  for (const auto& [name, t] : init.params) EXPECT_TRUE(testing::tensors_bit_equal(ckpt.at(name), t)) << name;
}

TEST(TrainVq, LossDecreases) {
  auto data = testing::random_dataset(16, 2, 16, 8);
  SeededRng rng(2, "train_vq");
  VqTrainLog log;
  train_vq(data, tiny_vq(), testing::adam_stage(60, 3e-3), rng, &log);
  ASSERT_EQ(log.losses.size(), 60u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += log.losses[static_cast<std::size_t>(i)];
    tail += log.losses[log.losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, head);
}

TEST(TrainVq, Errors) {
  SeededRng rng(1, "train_vq");
  EXPECT_THROW(train_vq(DatasetManifest(), tiny_vq(), testing::adam_stage(1, 1e-3), rng), ValidationError);
  auto wrong = testing::random_dataset(4, 2, 8, 1);
  EXPECT_THROW(train_vq(wrong, tiny_vq(), testing::adam_stage(1, 1e-3), rng), ShapeError);
  auto data = testing::random_dataset(4, 2, 16, 1);
  EXPECT_THROW(train_vq(data, tiny_vq(), testing::adam_stage(3, 1e30), rng), DivergenceError);
}

TEST(StraightThrough, EncoderGradientEqualsDecoderInputGradient) {
  auto tok = fresh();
  auto x = testing::random_dataset(4, 2, 16, 6).images();
  auto fwd = vq_forward(tok.net(), x, tok.config());
  (tok.config().lambda_rec * fwd.rec_loss).backward();
  ASSERT_TRUE(fwd.z_e.grad().defined());
  ASSERT_TRUE(fwd.z_st.grad().defined());
  EXPECT_TRUE(testing::tensors_bit_equal(fwd.z_e.grad(), fwd.z_st.grad()));
  EXPECT_GT(fwd.z_e.grad().abs().max().item<float>(), 0.0f);
  // z_e + (z_q - z_e) reproduces z_q up to one rounding step.
  EXPECT_TRUE(torch::allclose(fwd.z_st.detach(), fwd.z_q.detach(), 0.0, 1e-6));
}

TEST(StraightThrough, CommitmentGradientMatchesFiniteDifferences) {
  const double beta = 0.25;
  auto z_q = torch::tensor({0.3, -0.7}, torch::kFloat64).reshape({1, 2, 1, 1});
  auto z_e = torch::tensor({1.1, 0.4}, torch::kFloat64).reshape({1, 2, 1, 1}).requires_grad_(true);
  commitment_loss(z_e, z_q, beta).backward();
  auto analytic = z_e.grad().clone();
  const double h = 1e-6;
  for (std::int64_t c = 0; c < 2; ++c) {
    auto plus = z_e.detach().clone();
    auto minus = z_e.detach().clone();
    plus[0][c][0][0] += h;
    minus[0][c][0][0] -= h;
    const double fd = (commitment_loss(plus, z_q, beta).item<double>() -
                       commitment_loss(minus, z_q, beta).item<double>()) /
                      (2 * h);
    const double a = analytic[0][c][0][0].item<double>();
    EXPECT_LT(std::abs(a - fd) / std::abs(fd), 1e-4) << "channel " << c;
  }
}

TEST(StraightThrough, CommitmentTermDoesNotReachCodebook) {
  auto tok = fresh();
  auto x = testing::random_dataset(2, 2, 16, 6).images();
  auto fwd = vq_forward(tok.net(), x, tok.config());
  fwd.commit_loss.backward();
  auto g = tok.net().codebook.grad();
  EXPECT_TRUE(!g.defined() || g.abs().max().item<float>() == 0.0f);
}

}  // namespace
}  // namespace ota::vq

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "ota/digg.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/metrics.hpp"
#include "ota/nn_utils.hpp"
#include "ota/vq_tokenizer.hpp"

namespace {

using namespace ota;

// Args: grid side, codebook size.
void BM_Quantize(benchmark::State& state) {
  const auto side = state.range(0), k = state.range(1);
  SeededRng rng(1, "bench/quantize");
  auto book = torch::empty({k, 16});
  auto latents = torch::empty({side, side, 16});
  nn::fill_normal(book, 1.0, rng);
  nn::fill_normal(latents, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(vq::quantize(latents, book));
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_Quantize)->Args({8, 64})->Args({8, 256})->Args({16, 256});

// Args: rows per bag, feature dim.
void BM_FdScore(benchmark::State& state) {
  const auto n = state.range(0), d = state.range(1);
  SeededRng rng(1, "bench/fd");
  metrics::FeatureBag a{Eigen::MatrixXd(n, d), "bench"}, b{Eigen::MatrixXd(n, d), "bench"};
  for (Eigen::Index i = 0; i < a.features.size(); ++i) a.features.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.features.size(); ++i) b.features.data()[i] = rng.normal() + 0.1;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::fd_score(a, b));
}
BENCHMARK(BM_FdScore)->Args({500, 32})->Args({2000, 64})->Args({2000, 256});

// Arg: prefix length.
void BM_NextLogits(benchmark::State& state) {
  lt::LtConfig c;
  c.layers = 2;
  c.heads = 2;
  c.dim = 64;
  c.context = 64;
  c.vocab = 64;
  SeededRng rng(1, "bench/lt");
  auto model = lt::LatentTransformer::initialize(c, rng);
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(state.range(0)));
  for (auto& t : prefix) t = static_cast<std::int64_t>(rng.uniform_index(64));
  for (auto _ : state) benchmark::DoNotOptimize(model.next_logits(prefix));
}
BENCHMARK(BM_NextLogits)->Arg(0)->Arg(32)->Arg(63);

void BM_MakeMask(benchmark::State& state) {
  const digg::MaskSpec spec{static_cast<digg::MaskScheme>(state.range(0)), 0.4};
  SeededRng rng(1, "bench/mask");
  for (auto _ : state) benchmark::DoNotOptimize(digg::make_mask(16, 16, spec, rng));
  state.SetLabel(std::string(digg::to_string(spec.scheme)));
}
BENCHMARK(BM_MakeMask)
    ->Arg(static_cast<int>(digg::MaskScheme::bottom_half))
    ->Arg(static_cast<int>(digg::MaskScheme::random_rows))
    ->Arg(static_cast<int>(digg::MaskScheme::random_block));

}  // namespace

BENCHMARK_MAIN();

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ota/rng.hpp"
#include "ota/stage_config.hpp"

namespace ota::nn {

using ParamMap = std::map<std::string, torch::Tensor>;

/// Fills `t` in place from `rng` (values generated on the host, in flat order).
void fill_uniform(torch::Tensor t, double bound, SeededRng& rng);
void fill_normal(torch::Tensor t, double stddev, SeededRng& rng);

/// He-uniform weights (bound sqrt(6 / fan_in)) and small uniform biases for
/// every conv/linear layer under `module`; LayerNorm/GroupNorm get (1, 0); embeddings N(0, 0.02).
void init_module(torch::nn::Module& module, SeededRng& rng);

/// Deep copies of all parameters and buffers, keyed `prefix + name`.
ParamMap export_params(const torch::nn::Module& module, const std::string& prefix = "");

/// Copies `params[prefix + name]` into every parameter/buffer of `module`.
/// Missing names or shape mismatches throw ShapeError.
void import_params(torch::nn::Module& module, const ParamMap& params, const std::string& prefix = "");

void set_requires_grad(torch::nn::Module& module, bool requires_grad);

/// Row-wise argmax; ties resolve to the lowest index.
std::vector<std::int64_t> argmax_rows(const torch::Tensor& scores);

/// Throws DivergenceError naming `what` when `value` is not finite.
void ensure_finite(double value, const std::string& what);

/// Bilinear resize of an N x C x H x W batch to side x side (no-op when already that size).
torch::Tensor resize_square(const torch::Tensor& batch, std::int64_t side);

/// Train-time input pipeline: resize, then one random square crop per image.
torch::Tensor train_inputs(const torch::Tensor& batch, const InputPipeline& input, SeededRng& rng);
/// Evaluation input pipeline: resize only.
torch::Tensor eval_inputs(const torch::Tensor& batch, const InputPipeline& input);

/// Visits indices 0..n-1 in a fresh random order each epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, SeededRng rng);
  std::vector<std::size_t> next(std::size_t batch_size);
  std::int64_t epoch() const noexcept { return epoch_; }

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
  SeededRng rng_;
};

/// SGD with Nesterov momentum or Adam over `params`, configured from `opt`.
std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params,
                                                       const OptimizerConfig& opt, double lr,
                                                       double weight_decay);
void set_learning_rate(torch::optim::Optimizer& optimizer, double lr);

/// Pins intra-op parallelism so repeated runs see identical reduction orders.
void configure_determinism(int threads = 1);

}  // namespace ota::nn

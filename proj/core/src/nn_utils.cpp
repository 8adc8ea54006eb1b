// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/nn_utils.hpp"

#include <cmath>
#include <numeric>

#include "ota/error.hpp"

namespace ota::nn {

void fill_uniform(torch::Tensor t, double bound, SeededRng& rng) {
  torch::NoGradGuard no_grad;
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  t.copy_(torch::tensor(values, torch::kFloat64).reshape(t.sizes()).to(t.scalar_type()));
}

void fill_normal(torch::Tensor t, double stddev, SeededRng& rng) {
  torch::NoGradGuard no_grad;
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (auto& v : values) v = stddev * rng.normal();
  t.copy_(torch::tensor(values, torch::kFloat64).reshape(t.sizes()).to(t.scalar_type()));
}

namespace {

std::int64_t fan_in_of(const torch::Tensor& w, bool transposed) {
  if (w.dim() < 2) return w.numel();
  std::int64_t receptive = 1;
  for (int d = 2; d < w.dim(); ++d) receptive *= w.size(d);
  return (transposed ? w.size(0) : w.size(1)) * receptive;
}

}  // namespace

void init_module(torch::nn::Module& module, SeededRng& rng) {
  torch::NoGradGuard no_grad;
  for (const auto& named : module.named_modules("", /*include_self=*/true)) {
    auto& m = *named.value();
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      const auto fan_in = fan_in_of(conv->weight, false);
      fill_uniform(conv->weight, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
      if (conv->bias.defined()) fill_uniform(conv->bias, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    } else if (auto* deconv = m.as<torch::nn::ConvTranspose2d>()) {
      const auto fan_in = fan_in_of(deconv->weight, true);
      fill_uniform(deconv->weight, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
      if (deconv->bias.defined()) fill_uniform(deconv->bias, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    } else if (auto* linear = m.as<torch::nn::Linear>()) {
      const auto fan_in = linear->weight.size(1);
      fill_uniform(linear->weight, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
      if (linear->bias.defined()) fill_uniform(linear->bias, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    } else if (auto* ln = m.as<torch::nn::LayerNorm>()) {
      if (ln->weight.defined()) ln->weight.fill_(1.0);
      if (ln->bias.defined()) ln->bias.zero_();
    } else if (auto* gn = m.as<torch::nn::GroupNorm>()) {
      if (gn->weight.defined()) gn->weight.fill_(1.0);
      if (gn->bias.defined()) gn->bias.zero_();
    } else if (auto* emb = m.as<torch::nn::Embedding>()) {
      fill_normal(emb->weight, 0.02, rng);
    }
  }
}

ParamMap export_params(const torch::nn::Module& module, const std::string& prefix) {
  ParamMap out;
  for (const auto& p : module.named_parameters(true)) out.emplace(prefix + p.key(), p.value().detach().clone());
  for (const auto& b : module.named_buffers(true)) out.emplace(prefix + b.key(), b.value().detach().clone());
  return out;
}

void import_params(torch::nn::Module& module, const ParamMap& params, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  auto copy_one = [&](const std::string& key, torch::Tensor& dst) {
    auto it = params.find(prefix + key);
    if (it == params.end()) throw ShapeError("checkpoint is missing parameter '" + prefix + key + "'");
    if (it->second.sizes() != dst.sizes())
      throw ShapeError("parameter '" + prefix + key + "' has an incompatible shape");
    dst.copy_(it->second);
  };
  for (auto& p : module.named_parameters(true)) copy_one(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_one(b.key(), b.value());
}

void set_requires_grad(torch::nn::Module& module, bool requires_grad) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(requires_grad);
}

std::vector<std::int64_t> argmax_rows(const torch::Tensor& scores) {
  auto s = scores.detach().to(torch::kFloat64).contiguous();
  if (s.dim() != 2) throw ShapeError("argmax_rows expects a 2-D tensor");
  const auto rows = s.size(0);
  const auto cols = s.size(1);
  auto acc = s.accessor<double, 2>();
  std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < cols; ++c)
      if (acc[r][c] > acc[r][best]) best = c;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

void ensure_finite(double value, const std::string& what) {
  if (!std::isfinite(value)) throw DivergenceError(what + ": loss became non-finite (" + std::to_string(value) + ")");
}

torch::Tensor resize_square(const torch::Tensor& batch, std::int64_t side) {
  if (batch.size(2) == side && batch.size(3) == side) return batch;
  namespace F = torch::nn::functional;
  return F::interpolate(batch, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{side, side})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
}

torch::Tensor train_inputs(const torch::Tensor& batch, const InputPipeline& input, SeededRng& rng) {
  auto resized = resize_square(batch, input.resize);
  if (input.crop == input.resize) return resized;
  const auto span = static_cast<std::uint64_t>(input.resize - input.crop + 1);
  std::vector<torch::Tensor> crops;
  crops.reserve(static_cast<std::size_t>(resized.size(0)));
  for (std::int64_t i = 0; i < resized.size(0); ++i) {
    const auto top = static_cast<std::int64_t>(rng.uniform_index(span));
    const auto left = static_cast<std::int64_t>(rng.uniform_index(span));
    crops.push_back(resized[i].slice(1, top, top + input.crop).slice(2, left, left + input.crop));
  }
  return torch::stack(crops);
}

torch::Tensor eval_inputs(const torch::Tensor& batch, const InputPipeline& input) {
  return resize_square(batch, input.resize);
}

EpochSampler::EpochSampler(std::size_t n, SeededRng rng) : order_(n), rng_(std::move(rng)) {
  if (n == 0) throw ValidationError("cannot sample batches from an empty dataset");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void EpochSampler::reshuffle() {
  rng_.shuffle(std::span<std::size_t>(order_));
  cursor_ = 0;
}

std::vector<std::size_t> EpochSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params,
                                                       const OptimizerConfig& opt, double lr,
                                                       double weight_decay) {
  if (opt.kind == OptimizerKind::adam) {
    return std::make_unique<torch::optim::Adam>(
        std::move(params), torch::optim::AdamOptions(lr).weight_decay(weight_decay));
  }
  return std::make_unique<torch::optim::SGD>(
      std::move(params),
      torch::optim::SGDOptions(lr).momentum(opt.momentum).nesterov(opt.momentum > 0.0).weight_decay(weight_decay));
}

void set_learning_rate(torch::optim::Optimizer& optimizer, double lr) {
  for (auto& group : optimizer.param_groups()) {
    auto& options = group.options();
    options.set_lr(lr);
  }
}

void configure_determinism(int threads) {
  torch::set_num_threads(threads);
}

}  // namespace ota::nn

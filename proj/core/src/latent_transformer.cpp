// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/latent_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"
#include "ota/nn_utils.hpp"

namespace ota::lt {

void LtConfig::validate() const {
  if (layers < 1 || heads < 1 || dim < 1 || context < 1 || vocab < 1)
    throw ValidationError("lt: sizes must be positive");
  if (dim % heads != 0) throw ValidationError("lt: dim must be divisible by heads");
}

nlohmann::json to_json(const LtConfig& c) {
  return {{"layers", c.layers}, {"heads", c.heads}, {"dim", c.dim}, {"context", c.context}, {"vocab", c.vocab}};
}

LtConfig lt_config_from_json(const nlohmann::json& json, const LtConfig& defaults, const std::string& context) {
  LtConfig c = defaults;
  JsonFields f(json, context);
  f.read("layers", c.layers).read("heads", c.heads).read("dim", c.dim).read("context", c.context).read("vocab", c.vocab);
  f.finish();
  c.validate();
  return c;
}

CausalSelfAttentionImpl::CausalSelfAttentionImpl(std::int64_t dim, std::int64_t heads) : heads_(heads) {
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor CausalSelfAttentionImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto t = x.size(1);
  const auto d = x.size(2);
  const auto hd = d / heads_;
  auto parts = qkv_->forward(x).chunk(3, -1);
  auto q = parts[0].view({b, t, heads_, hd}).transpose(1, 2);
  auto k = parts[1].view({b, t, heads_, hd}).transpose(1, 2);
  auto v = parts[2].view({b, t, heads_, hd}).transpose(1, 2);
  auto scores = q.matmul(k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  auto future = torch::ones({t, t}, torch::kBool).triu(1);
  scores = scores.masked_fill(future, -std::numeric_limits<float>::infinity());
  auto attn = torch::softmax(scores, -1);
  auto y = attn.matmul(v).transpose(1, 2).contiguous().view({b, t, d});
  return proj_->forward(y);
}

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads) {
  ln1_ = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", CausalSelfAttention(dim, heads));
  ln2_ = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, 4 * dim));
  fc2_ = register_module("fc2", torch::nn::Linear(4 * dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  auto h = x + attn_->forward(ln1_->forward(x));
  return h + fc2_->forward(torch::gelu(fc1_->forward(ln2_->forward(h))));
}

LatentTransformerNetImpl::LatentTransformerNetImpl(const LtConfig& c) {
  token_embedding = register_module("token_embedding", torch::nn::Embedding(c.vocab + 1, c.dim));
  position_embedding = register_parameter("position_embedding", torch::zeros({c.context, c.dim}));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (std::int64_t i = 0; i < c.layers; ++i) blocks->push_back(TransformerBlock(c.dim, c.heads));
  final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.dim})));
  head = register_module("head", torch::nn::Linear(c.dim, c.vocab));
}

torch::Tensor LatentTransformerNetImpl::forward(const torch::Tensor& inputs) {
  const auto t = inputs.size(1);
  if (t > position_embedding.size(0)) throw ShapeError("sequence longer than the transformer context");
  auto x = token_embedding->forward(inputs) + position_embedding.slice(0, 0, t).unsqueeze(0);
  for (const auto& block : *blocks) x = block->as<TransformerBlock>()->forward(x);
  return head->forward(final_norm->forward(x));
}

LatentTransformer::LatentTransformer(LtConfig config, std::shared_ptr<LatentTransformerNetImpl> net)
    : config_(std::move(config)), net_(std::move(net)) {}

LatentTransformer LatentTransformer::initialize(const LtConfig& config, SeededRng& rng) {
  config.validate();
  auto net = std::make_shared<LatentTransformerNetImpl>(config);
  nn::init_module(*net, rng);
  nn::fill_normal(net->position_embedding, 0.02, rng);
  return LatentTransformer(config, std::move(net));
}

LatentTransformer LatentTransformer::from_checkpoint(const Checkpoint& checkpoint) {
  const auto& extra = checkpoint.meta.extra;
  if (extra.value("kind", "") != "lt") throw ValidationError("checkpoint is not a latent transformer");
  auto config = lt_config_from_json(extra.at("config"), LtConfig{}, "lt checkpoint config");
  auto net = std::make_shared<LatentTransformerNetImpl>(config);
  nn::import_params(*net, checkpoint.params, "lt.");
  net->eval();
  return LatentTransformer(config, std::move(net));
}

Checkpoint LatentTransformer::to_checkpoint(CheckpointMeta meta) const {
  meta.extra["kind"] = "lt";
  meta.extra["config"] = to_json(config_);
  return Checkpoint{nn::export_params(*net_, "lt."), std::move(meta)};
}

void LatentTransformer::check_tokens(std::span<const std::int64_t> tokens) const {
  for (auto t : tokens)
    if (t < 0 || t >= config_.vocab)
      throw ValidationError("token " + std::to_string(t) + " outside [0, " + std::to_string(config_.vocab) + ")");
}

std::vector<float> LatentTransformer::next_logits(std::span<const std::int64_t> prefix) const {
  if (static_cast<std::int64_t>(prefix.size()) >= config_.context)
    throw ShapeError("next_logits: prefix must be shorter than the context length");
  check_tokens(prefix);
  std::vector<std::int64_t> input;
  input.reserve(prefix.size() + 1);
  input.push_back(start_token());
  input.insert(input.end(), prefix.begin(), prefix.end());
  torch::NoGradGuard no_grad;
  auto x = torch::tensor(input, torch::kInt64).unsqueeze(0);
  auto logits = net_->forward(x)[0][static_cast<std::int64_t>(prefix.size())].to(torch::kFloat32).contiguous();
  const float* p = logits.data_ptr<float>();
  return std::vector<float>(p, p + logits.numel());
}

torch::Tensor LatentTransformer::sequence_logits(std::span<const std::int64_t> sequence) const {
  if (sequence.empty() || static_cast<std::int64_t>(sequence.size()) > config_.context)
    throw ShapeError("sequence_logits: length must lie in [1, context]");
  check_tokens(sequence);
  std::vector<std::int64_t> input;
  input.reserve(sequence.size());
  input.push_back(start_token());
  input.insert(input.end(), sequence.begin(), sequence.end() - 1);
  torch::NoGradGuard no_grad;
  return net_->forward(torch::tensor(input, torch::kInt64).unsqueeze(0))[0].contiguous();
}

Checkpoint train_lt(std::span<const TokenGrid> upstream_tokens, const LtConfig& config, const StageConfig& stage,
                    SeededRng& rng, LtTrainLog* log) {
  config.validate();
  stage.validate_allow_zero_steps();
  if (upstream_tokens.empty()) throw ValidationError("train_lt: no token sequences");
  const auto& first = upstream_tokens.front();
  if (first.area() != config.context)
    throw ShapeError("train_lt: grid area " + std::to_string(first.area()) + " does not match context " +
                     std::to_string(config.context));
  const auto n = static_cast<std::int64_t>(upstream_tokens.size());
  std::vector<std::int64_t> flat;
  flat.reserve(static_cast<std::size_t>(n * config.context));
  for (const auto& g : upstream_tokens) {
    if (!g.same_shape(first)) throw ShapeError("train_lt: token grids must share one shape");
    for (auto t : g.raster()) {
      if (t < 0 || t >= config.vocab) throw ValidationError("train_lt: token outside the vocabulary");
      flat.push_back(t);
    }
  }
  auto sequences = torch::tensor(flat, torch::kInt64).view({n, config.context});
  auto inputs_all = torch::cat({torch::full({n, 1}, config.vocab, torch::kInt64), sequences.slice(1, 0, config.context - 1)}, 1);

  auto init_rng = rng.derive("init");
  auto model = LatentTransformer::initialize(config, init_rng);
  auto& net = model.net();
  net.train();
  auto optimizer = nn::make_optimizer(net.parameters(), stage.optimizer, stage.lr_schedule.initial,
                                      stage.optimizer.weight_decay);
  nn::EpochSampler sampler(static_cast<std::size_t>(n), rng.derive("batches"));

  for (std::int64_t step = 0; step < stage.steps; ++step) {
    nn::set_learning_rate(*optimizer, stage.lr_schedule.lr_at(step, stage.steps));
    auto idx = sampler.next(static_cast<std::size_t>(stage.batch_size));
    std::vector<std::int64_t> idx64(idx.begin(), idx.end());
    auto index = torch::tensor(idx64, torch::kInt64);
    auto inputs = inputs_all.index_select(0, index);
    auto targets = sequences.index_select(0, index);
    auto logits = net.forward(inputs);
    auto loss = torch::nn::functional::cross_entropy(logits.reshape({-1, config.vocab}), targets.reshape({-1}));
    const double value = loss.item<double>();
    nn::ensure_finite(value, "train_lt step " + std::to_string(step));
    optimizer->zero_grad();
    loss.backward();
    optimizer->step();
    if (log) log->losses.push_back(value);
  }
  net.eval();

  CheckpointMeta meta;
  meta.stage_name = "prime_lt";
  meta.seed = rng.seed();
  meta.config_digest = config_digest({{"lt", to_json(config)}, {"stage", to_json(stage)}});
  meta.created_at = timestamp_now();
  return model.to_checkpoint(std::move(meta));
}

void SamplingParams::validate(std::int64_t vocab) const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
  if (top_k < 1 || top_k > vocab)
    throw ValidationError("top_k must lie in [1, " + std::to_string(vocab) + "]");
}

std::int64_t sample_index(std::span<const float> logits, const SamplingParams& params, SeededRng& rng) {
  const auto vocab = static_cast<std::int64_t>(logits.size());
  params.validate(vocab);
  std::vector<std::int64_t> order(static_cast<std::size_t>(vocab));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  const auto k = static_cast<std::size_t>(params.top_k);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::int64_t a, std::int64_t b) {
                      const float la = logits[static_cast<std::size_t>(a)];
                      const float lb = logits[static_cast<std::size_t>(b)];
                      return la > lb || (la == lb && a < b);
                    });
  order.resize(k);
  const double top = static_cast<double>(logits[static_cast<std::size_t>(order.front())]) / params.temperature;
  std::vector<double> weights(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp(static_cast<double>(logits[static_cast<std::size_t>(order[i])]) / params.temperature - top);
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    cumulative += weights[i];
    if (u < cumulative) return order[i];
  }
  return order.back();
}

TokenGrid complete_tokens(const TokenGrid& partial, const MaskGrid& mask, const LatentTransformer& model,
                          const SamplingParams& params, SeededRng& rng) {
  if (!partial.same_shape(mask)) throw ShapeError("complete_tokens: mask shape differs from the token grid");
  const auto& cfg = model.config();
  if (partial.area() != cfg.context)
    throw ShapeError("complete_tokens: grid area does not match the transformer context");
  params.validate(cfg.vocab);
  for (std::int64_t i = 0; i < partial.area(); ++i) {
    if (mask[i]) continue;
    const auto t = partial[i];
    if (t < 0 || t >= cfg.vocab)
      throw ValidationError("complete_tokens: unmasked token " + std::to_string(t) + " at cell " + std::to_string(i) +
                            " is outside the vocabulary");
  }

  TokenGrid out = partial;
  auto cells = out.raster();
  for (std::int64_t i = 0; i < out.area(); ++i) {
    if (!mask[i]) continue;
    auto logits = model.next_logits(cells.subspan(0, static_cast<std::size_t>(i)));
    cells[static_cast<std::size_t>(i)] = sample_index(logits, params, rng);
  }
  return out;
}

}  // namespace ota::lt

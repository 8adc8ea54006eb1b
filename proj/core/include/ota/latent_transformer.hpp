// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ota/checkpoint.hpp"
#include "ota/grid.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"

namespace ota::lt {

struct LtConfig {
  std::int64_t layers = 4;
  std::int64_t heads = 4;
  std::int64_t dim = 128;
  /// Sequence length; equals the tokenizer grid area h * w.
  std::int64_t context = 64;
  /// Codebook size |Z|. Index `vocab` is reserved for the start token.
  std::int64_t vocab = 256;

  void validate() const;
};

nlohmann::json to_json(const LtConfig& config);
LtConfig lt_config_from_json(const nlohmann::json& json, const LtConfig& defaults, const std::string& context);

class CausalSelfAttentionImpl : public torch::nn::Module {
 public:
  CausalSelfAttentionImpl(std::int64_t dim, std::int64_t heads);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::int64_t heads_;
  torch::nn::Linear qkv_{nullptr};
  torch::nn::Linear proj_{nullptr};
};
TORCH_MODULE(CausalSelfAttention);

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::LayerNorm ln1_{nullptr};
  torch::nn::LayerNorm ln2_{nullptr};
  CausalSelfAttention attn_{nullptr};
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Pre-norm GPT-style decoder over codebook indices.
class LatentTransformerNetImpl : public torch::nn::Module {
 public:
  explicit LatentTransformerNetImpl(const LtConfig& config);
  /// B x T int64 inputs (T <= context) -> B x T x vocab logits.
  torch::Tensor forward(const torch::Tensor& inputs);

  torch::nn::Embedding token_embedding{nullptr};
  torch::Tensor position_embedding;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm final_norm{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(LatentTransformerNet);

/// Next-index prediction model. Position i of the model input is
/// [start, s_0, ..., s_{i-1}] and its logits score s_i.
class LatentTransformer {
 public:
  static LatentTransformer initialize(const LtConfig& config, SeededRng& rng);
  static LatentTransformer from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint(CheckpointMeta meta) const;

  const LtConfig& config() const noexcept { return config_; }
  std::int64_t start_token() const noexcept { return config_.vocab; }

  /// Logits of the next index after `prefix`; |prefix| < context.
  std::vector<float> next_logits(std::span<const std::int64_t> prefix) const;
  /// Teacher-forced logits for every position of a full sequence: row i scores
  /// sequence[i] given sequence[0..i). Returns |sequence| x vocab.
  torch::Tensor sequence_logits(std::span<const std::int64_t> sequence) const;

  LatentTransformerNetImpl& net() const { return *net_; }

 private:
  LatentTransformer(LtConfig config, std::shared_ptr<LatentTransformerNetImpl> net);
  void check_tokens(std::span<const std::int64_t> tokens) const;

  LtConfig config_;
  std::shared_ptr<LatentTransformerNetImpl> net_;
};

struct LtTrainLog {
  std::vector<double> losses;
};

/// Cross-entropy training on raster-flattened upstream token grids. Weights are
/// initialised from rng.derive("init").
Checkpoint train_lt(std::span<const TokenGrid> upstream_tokens, const LtConfig& config, const StageConfig& stage,
                    SeededRng& rng, LtTrainLog* log = nullptr);

struct SamplingParams {
  double temperature = 1.0;
  std::int64_t top_k = 100;

  void validate(std::int64_t vocab) const;
};

/// Draws one index from softmax(logits / temperature) restricted to the top_k
/// largest logits (ties ranked by lower index). Consumes exactly one uniform draw.
std::int64_t sample_index(std::span<const float> logits, const SamplingParams& params, SeededRng& rng);

/// Fills masked cells in raster order, each conditioned on every preceding
/// (real or generated) token. Unmasked cells are copied unchanged.
TokenGrid complete_tokens(const TokenGrid& partial, const MaskGrid& mask, const LatentTransformer& model,
                          const SamplingParams& params, SeededRng& rng);

}  // namespace ota::lt

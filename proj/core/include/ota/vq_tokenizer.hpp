// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ota/checkpoint.hpp"
#include "ota/dataset.hpp"
#include "ota/grid.hpp"
#include "ota/rng.hpp"
#include "ota/stage_config.hpp"

namespace ota::vq {

struct VqConfig {
  std::int64_t image_size = 32;
  std::int64_t channels = 3;
  /// Total encoder downsampling; a power of two dividing image_size.
  std::int64_t stride = 4;
  std::int64_t hidden = 64;
  std::int64_t codebook_size = 256;
  std::int64_t code_dim = 16;
  double beta_commit = 0.25;
  double lambda_rec = 1.0;
  bool bias = true;
  /// Adds a patch discriminator with a hinge loss (off by default).
  bool adversarial = false;
  double adversarial_weight = 0.1;
  /// Fraction of training steps after which the adversarial term switches on.
  double adversarial_start = 0.5;

  std::int64_t grid_side() const noexcept { return image_size / stride; }
  void validate() const;
};

nlohmann::json to_json(const VqConfig& config);
VqConfig vq_config_from_json(const nlohmann::json& json, const VqConfig& defaults, const std::string& context);

/// Convolutional encoder/decoder pair plus the |Z| x n_z codebook.
class VqNetImpl : public torch::nn::Module {
 public:
  explicit VqNetImpl(const VqConfig& config);

  /// N x C x H x W -> N x n_z x h x w
  torch::Tensor encode(const torch::Tensor& images);
  /// N x n_z x h x w -> N x C x H x W, unclamped.
  torch::Tensor decode(const torch::Tensor& latents);

  torch::nn::Sequential encoder{nullptr};
  torch::nn::Sequential decoder{nullptr};
  torch::Tensor codebook;
};
TORCH_MODULE(VqNet);

/// Tensors of one training forward pass. z_st is the straight-through input
/// of the decoder: numerically z_q, with gradients routed to z_e.
struct VqForward {
  torch::Tensor z_e;
  torch::Tensor z_q;
  torch::Tensor z_st;
  torch::Tensor recon;
  torch::Tensor tokens;
  torch::Tensor rec_loss;
  torch::Tensor codebook_loss;
  torch::Tensor commit_loss;
  torch::Tensor total;
};

/// Builds the training graph for a batch. z_e and z_st retain their gradients.
VqForward vq_forward(VqNetImpl& net, const torch::Tensor& images, const VqConfig& config);

/// beta * mean((z_e - sg[z_q])^2), the encoder-side commitment term.
torch::Tensor commitment_loss(const torch::Tensor& z_e, const torch::Tensor& z_q, double beta);

/// Exact nearest codeword (squared L2 in double precision, ties to the lowest
/// index) for each row of an M x n_z matrix.
std::vector<std::int64_t> nearest_codewords(const torch::Tensor& vectors, const torch::Tensor& codebook);

struct Quantized {
  TokenGrid tokens;
  /// h x w x n_z codebook entries selected by `tokens`.
  torch::Tensor latents;
};

/// Maps each latent cell of an h x w x n_z grid to its nearest codebook entry.
Quantized quantize(const torch::Tensor& latents, const torch::Tensor& codebook);

/// Trained (or freshly initialised) tokenizer. Inference methods are const and
/// safe to call concurrently; the network is shared between copies.
class VqTokenizer {
 public:
  static VqTokenizer initialize(const VqConfig& config, SeededRng& rng);
  static VqTokenizer from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint(CheckpointMeta meta) const;

  const VqConfig& config() const noexcept { return config_; }
  torch::Tensor codebook() const;

  /// H x W x C pixels -> h x w x n_z latents.
  torch::Tensor encode(const torch::Tensor& pixels) const;
  Quantized quantize(const torch::Tensor& latents) const;
  /// Codebook lookup: h x w x n_z.
  torch::Tensor lookup(const TokenGrid& tokens) const;
  /// h x w x n_z -> H x W x C clamped to [0, 1].
  torch::Tensor decode_latents(const torch::Tensor& latents) const;
  torch::Tensor decode(const TokenGrid& tokens) const;
  /// quantize(encode(pixels)).tokens
  TokenGrid tokenize(const torch::Tensor& pixels) const;

  VqNetImpl& net() const { return *net_; }

 private:
  VqTokenizer(VqConfig config, std::shared_ptr<VqNetImpl> net);

  VqConfig config_;
  std::shared_ptr<VqNetImpl> net_;
};

struct VqTrainLog {
  std::vector<double> losses;
  std::int64_t reseeded_codes = 0;
};

/// Stage 1 (priming): trains encoder, decoder and codebook on upstream images.
/// Parameters are initialised from rng.derive("init"), so 0 steps returns
/// exactly VqTokenizer::initialize(config, that stream).
Checkpoint train_vq(const DatasetManifest& upstream, const VqConfig& config, const StageConfig& stage,
                    SeededRng& rng, VqTrainLog* log = nullptr);

/// Stage 2 (assembling): decode(quantize(encode(x))) for every record, with
/// the generative model fixed. Ids, labels and order are preserved.
DatasetManifest rerepresent(const DatasetManifest& dataset, const VqTokenizer& tokenizer);

}  // namespace ota::vq

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/vq_tokenizer.hpp"

#include <cmath>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"
#include "ota/nn_utils.hpp"

namespace ota::vq {

namespace F = torch::nn::functional;

void VqConfig::validate() const {
  if (image_size <= 0 || channels <= 0 || hidden <= 0 || codebook_size < 1 || code_dim < 1)
    throw ValidationError("vq: sizes must be positive");
  if (stride < 1 || (stride & (stride - 1)) != 0) throw ValidationError("vq: stride must be a power of two");
  if (image_size % stride != 0) throw ValidationError("vq: stride must divide image_size");
  if (!(beta_commit > 0.0)) throw ValidationError("vq: beta_commit must be positive");
  if (!(lambda_rec > 0.0)) throw ValidationError("vq: lambda_rec must be positive");
  if (adversarial && !(adversarial_weight > 0.0)) throw ValidationError("vq: adversarial_weight must be positive");
}

nlohmann::json to_json(const VqConfig& c) {
  return {{"image_size", c.image_size},   {"channels", c.channels},
          {"stride", c.stride},           {"hidden", c.hidden},
          {"codebook_size", c.codebook_size}, {"code_dim", c.code_dim},
          {"beta_commit", c.beta_commit}, {"lambda_rec", c.lambda_rec},
          {"bias", c.bias},               {"adversarial", c.adversarial},
          {"adversarial_weight", c.adversarial_weight}, {"adversarial_start", c.adversarial_start}};
}

VqConfig vq_config_from_json(const nlohmann::json& json, const VqConfig& defaults, const std::string& context) {
  VqConfig c = defaults;
  JsonFields f(json, context);
  f.read("image_size", c.image_size)
      .read("channels", c.channels)
      .read("stride", c.stride)
      .read("hidden", c.hidden)
      .read("codebook_size", c.codebook_size)
      .read("code_dim", c.code_dim)
      .read("beta_commit", c.beta_commit)
      .read("lambda_rec", c.lambda_rec)
      .read("bias", c.bias)
      .read("adversarial", c.adversarial)
      .read("adversarial_weight", c.adversarial_weight)
      .read("adversarial_start", c.adversarial_start);
  f.finish();
  c.validate();
  return c;
}

namespace {

int log2_exact(std::int64_t v) {
  int n = 0;
  while ((std::int64_t{1} << n) < v) ++n;
  return n;
}

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride, std::int64_t pad,
                       bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(pad).bias(bias));
}

}  // namespace

VqNetImpl::VqNetImpl(const VqConfig& c) {
  const int downs = log2_exact(c.stride);
  torch::nn::Sequential enc;
  enc->push_back(conv(c.channels, c.hidden, 3, 1, 1, c.bias));
  enc->push_back(torch::nn::ReLU());
  for (int i = 0; i < downs; ++i) {
    enc->push_back(conv(c.hidden, c.hidden, 4, 2, 1, c.bias));
    enc->push_back(torch::nn::ReLU());
  }
  enc->push_back(conv(c.hidden, c.hidden, 3, 1, 1, c.bias));
  enc->push_back(torch::nn::ReLU());
  enc->push_back(conv(c.hidden, c.code_dim, 1, 1, 0, c.bias));
  encoder = register_module("encoder", enc);

  torch::nn::Sequential dec;
  dec->push_back(conv(c.code_dim, c.hidden, 3, 1, 1, c.bias));
  dec->push_back(torch::nn::ReLU());
  dec->push_back(conv(c.hidden, c.hidden, 3, 1, 1, c.bias));
  dec->push_back(torch::nn::ReLU());
  for (int i = 0; i < downs; ++i) {
    dec->push_back(torch::nn::ConvTranspose2d(
        torch::nn::ConvTranspose2dOptions(c.hidden, c.hidden, 4).stride(2).padding(1).bias(c.bias)));
    dec->push_back(torch::nn::ReLU());
  }
  dec->push_back(conv(c.hidden, c.channels, 3, 1, 1, c.bias));
  decoder = register_module("decoder", dec);

  codebook = register_parameter("codebook", torch::zeros({c.codebook_size, c.code_dim}));
}

torch::Tensor VqNetImpl::encode(const torch::Tensor& images) { return encoder->forward(images); }

torch::Tensor VqNetImpl::decode(const torch::Tensor& latents) { return decoder->forward(latents); }

torch::Tensor commitment_loss(const torch::Tensor& z_e, const torch::Tensor& z_q, double beta) {
  return beta * F::mse_loss(z_e, z_q.detach());
}

VqForward vq_forward(VqNetImpl& net, const torch::Tensor& images, const VqConfig& config) {
  VqForward out;
  out.z_e = net.encode(images);
  const auto n = out.z_e.size(0);
  const auto h = out.z_e.size(2);
  const auto w = out.z_e.size(3);
  const auto nz = out.z_e.size(1);
  auto flat = out.z_e.permute({0, 2, 3, 1}).reshape({-1, nz});
  {
    torch::NoGradGuard no_grad;
    auto book = net.codebook.detach();
    auto dist = flat.detach().pow(2).sum(1, true) - 2.0 * flat.detach().matmul(book.t()) +
                book.pow(2).sum(1).unsqueeze(0);
    out.tokens = dist.argmin(1);
  }
  out.z_q = net.codebook.index_select(0, out.tokens).view({n, h, w, nz}).permute({0, 3, 1, 2});
  out.z_st = out.z_e + (out.z_q - out.z_e).detach();
  if (out.z_e.requires_grad()) {
    out.z_e.retain_grad();
    out.z_st.retain_grad();
  }
  out.recon = net.decode(out.z_st);
  out.rec_loss = F::mse_loss(out.recon, images);
  out.codebook_loss = F::mse_loss(out.z_q, out.z_e.detach());
  out.commit_loss = commitment_loss(out.z_e, out.z_q, config.beta_commit);
  out.total = config.lambda_rec * out.rec_loss + out.codebook_loss + out.commit_loss;
  out.tokens = out.tokens.view({n, h, w});
  return out;
}

std::vector<std::int64_t> nearest_codewords(const torch::Tensor& vectors, const torch::Tensor& codebook) {
  if (vectors.dim() != 2 || codebook.dim() != 2) throw ShapeError("nearest_codewords expects 2-D inputs");
  if (vectors.size(1) != codebook.size(1))
    throw ShapeError("latent width " + std::to_string(vectors.size(1)) + " does not match codebook width " +
                     std::to_string(codebook.size(1)));
  if (codebook.size(0) < 1) throw ShapeError("codebook is empty");
  auto v = vectors.detach().to(torch::kFloat64).contiguous();
  auto e = codebook.detach().to(torch::kFloat64).contiguous();
  if (!torch::isfinite(v).all().item<bool>()) throw ValidationError("quantize: latent contains non-finite values");
  const auto m = v.size(0);
  const auto k = e.size(0);
  const auto d = v.size(1);
  const double* vp = v.data_ptr<double>();
  const double* ep = e.data_ptr<double>();
  std::vector<std::int64_t> out(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    std::int64_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = vp[i * d + c] - ep[j * d + c];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

Quantized quantize(const torch::Tensor& latents, const torch::Tensor& codebook) {
  if (latents.dim() != 3) throw ShapeError("quantize expects an h x w x n_z latent grid");
  const auto h = latents.size(0);
  const auto w = latents.size(1);
  const auto nz = latents.size(2);
  auto tokens = nearest_codewords(latents.reshape({h * w, nz}), codebook);
  auto index = torch::tensor(tokens, torch::kInt64);
  auto q = codebook.detach().index_select(0, index).reshape({h, w, nz}).contiguous();
  return {TokenGrid(h, w, std::move(tokens)), std::move(q)};
}

VqTokenizer::VqTokenizer(VqConfig config, std::shared_ptr<VqNetImpl> net)
    : config_(std::move(config)), net_(std::move(net)) {}

VqTokenizer VqTokenizer::initialize(const VqConfig& config, SeededRng& rng) {
  config.validate();
  auto net = std::make_shared<VqNetImpl>(config);
  nn::init_module(*net, rng);
  torch::NoGradGuard no_grad;
  // Redraw until no two entries coincide bit-for-bit.
  const double bound = 1.0 / static_cast<double>(config.codebook_size);
  for (int attempt = 0;; ++attempt) {
    nn::fill_uniform(net->codebook, bound, rng);
    auto flat = net->codebook.contiguous();
    bool distinct = true;
    for (std::int64_t i = 0; i < flat.size(0) && distinct; ++i)
      for (std::int64_t j = i + 1; j < flat.size(0) && distinct; ++j)
        if (torch::equal(flat[i], flat[j])) distinct = false;
    if (distinct) break;
    if (attempt > 16) throw Error("vq: cannot draw a codebook with distinct entries");
  }
  return VqTokenizer(config, std::move(net));
}

VqTokenizer VqTokenizer::from_checkpoint(const Checkpoint& checkpoint) {
  const auto& extra = checkpoint.meta.extra;
  if (extra.value("kind", "") != "vq") throw ValidationError("checkpoint is not a VQ tokenizer");
  auto config = vq_config_from_json(extra.at("config"), VqConfig{}, "vq checkpoint config");
  auto net = std::make_shared<VqNetImpl>(config);
  nn::import_params(*net, checkpoint.params, "vq.");
  return VqTokenizer(config, std::move(net));
}

Checkpoint VqTokenizer::to_checkpoint(CheckpointMeta meta) const {
  meta.extra["kind"] = "vq";
  meta.extra["config"] = to_json(config_);
  return Checkpoint{nn::export_params(*net_, "vq."), std::move(meta)};
}

torch::Tensor VqTokenizer::codebook() const { return net_->codebook.detach(); }

torch::Tensor VqTokenizer::encode(const torch::Tensor& pixels) const {
  if (pixels.dim() != 3 || pixels.size(0) != config_.image_size || pixels.size(1) != config_.image_size ||
      pixels.size(2) != config_.channels)
    throw ShapeError("encode: expected a " + std::to_string(config_.image_size) + "x" +
                     std::to_string(config_.image_size) + "x" + std::to_string(config_.channels) + " image");
  torch::NoGradGuard no_grad;
  auto x = pixels.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0).contiguous();
  return net_->encode(x)[0].permute({1, 2, 0}).contiguous();
}

Quantized VqTokenizer::quantize(const torch::Tensor& latents) const {
  if (latents.dim() != 3 || latents.size(2) != config_.code_dim)
    throw ShapeError("quantize: latent width does not match the codebook");
  auto q = vq::quantize(latents, net_->codebook.detach());
  q.latents = q.latents.to(torch::kFloat32);
  return q;
}

torch::Tensor VqTokenizer::lookup(const TokenGrid& tokens) const {
  for (auto t : tokens.raster())
    if (t < 0 || t >= config_.codebook_size)
      throw ValidationError("token " + std::to_string(t) + " outside [0, " + std::to_string(config_.codebook_size) +
                            ")");
  std::vector<std::int64_t> flat(tokens.raster().begin(), tokens.raster().end());
  auto index = torch::tensor(flat, torch::kInt64);
  return net_->codebook.detach().index_select(0, index).reshape({tokens.height(), tokens.width(), config_.code_dim});
}

torch::Tensor VqTokenizer::decode_latents(const torch::Tensor& latents) const {
  const auto side = config_.grid_side();
  if (latents.dim() != 3 || latents.size(0) != side || latents.size(1) != side || latents.size(2) != config_.code_dim)
    throw ShapeError("decode: expected a " + std::to_string(side) + "x" + std::to_string(side) + "x" +
                     std::to_string(config_.code_dim) + " latent grid");
  torch::NoGradGuard no_grad;
  auto z = latents.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0).contiguous();
  return net_->decode(z)[0].permute({1, 2, 0}).clamp(0.0, 1.0).contiguous();
}

torch::Tensor VqTokenizer::decode(const TokenGrid& tokens) const { return decode_latents(lookup(tokens)); }

TokenGrid VqTokenizer::tokenize(const torch::Tensor& pixels) const { return quantize(encode(pixels)).tokens; }

namespace {

torch::nn::Sequential make_discriminator(std::int64_t channels) {
  torch::nn::Sequential d;
  d->push_back(conv(channels, 32, 4, 2, 1, true));
  d->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  d->push_back(conv(32, 64, 4, 2, 1, true));
  d->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
  d->push_back(conv(64, 1, 3, 1, 1, true));
  return d;
}

}  // namespace

Checkpoint train_vq(const DatasetManifest& upstream, const VqConfig& config, const StageConfig& stage,
                    SeededRng& rng, VqTrainLog* log) {
  config.validate();
  stage.validate_allow_zero_steps();
  if (upstream.empty()) throw ValidationError("train_vq: upstream dataset is empty");
  const auto shape = upstream.shape();
  if (shape.height != config.image_size || shape.width != config.image_size || shape.channels != config.channels)
    throw ShapeError("train_vq: upstream images do not match the configured input shape");

  auto init_rng = rng.derive("init");
  auto tokenizer = VqTokenizer::initialize(config, init_rng);
  auto& net = tokenizer.net();
  net.train();

  auto optimizer = nn::make_optimizer(net.parameters(), stage.optimizer, stage.lr_schedule.initial,
                                      stage.optimizer.weight_decay);

  torch::nn::Sequential disc{nullptr};
  std::unique_ptr<torch::optim::Optimizer> disc_opt;
  if (config.adversarial) {
    disc = make_discriminator(config.channels);
    auto disc_rng = rng.derive("discriminator");
    nn::init_module(*disc, disc_rng);
    disc_opt = nn::make_optimizer(disc->parameters(), stage.optimizer, stage.lr_schedule.initial,
                                  stage.optimizer.weight_decay);
  }
  const auto adversarial_from =
      static_cast<std::int64_t>(std::llround(config.adversarial_start * static_cast<double>(stage.steps)));

  nn::EpochSampler sampler(upstream.size(), rng.derive("batches"));
  auto reseed_rng = rng.derive("reseed");
  const auto batch = static_cast<std::size_t>(stage.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((upstream.size() + batch - 1) / batch);
  std::vector<std::int64_t> usage(static_cast<std::size_t>(config.codebook_size), 0);

  for (std::int64_t step = 0; step < stage.steps; ++step) {
    const double lr = stage.lr_schedule.lr_at(step, stage.steps);
    nn::set_learning_rate(*optimizer, lr);
    auto idx = sampler.next(batch);
    auto x = upstream.images(idx);

    auto fwd = vq_forward(net, x, config);
    auto loss = fwd.total;
    const bool adversarial_on = config.adversarial && step >= adversarial_from;
    if (adversarial_on) loss = loss - config.adversarial_weight * disc->forward(fwd.recon).mean();
    const double value = loss.item<double>();
    nn::ensure_finite(value, "train_vq step " + std::to_string(step));

    optimizer->zero_grad();
    loss.backward();
    optimizer->step();

    if (adversarial_on) {
      nn::set_learning_rate(*disc_opt, lr);
      disc_opt->zero_grad();
      auto d_loss = torch::relu(1.0 - disc->forward(x)).mean() + torch::relu(1.0 + disc->forward(fwd.recon.detach())).mean();
      d_loss.backward();
      disc_opt->step();
    }

    auto tokens = fwd.tokens.reshape({-1}).contiguous();
    const auto* tp = tokens.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < tokens.numel(); ++i) ++usage[static_cast<std::size_t>(tp[i])];

    if ((step + 1) % steps_per_epoch == 0) {
      // Codes unused for a whole epoch restart at a random encoder output.
      torch::NoGradGuard no_grad;
      auto pool = fwd.z_e.detach().permute({0, 2, 3, 1}).reshape({-1, config.code_dim});
      for (std::int64_t k = 0; k < config.codebook_size; ++k) {
        if (usage[static_cast<std::size_t>(k)] == 0) {
          const auto pick = static_cast<std::int64_t>(reseed_rng.uniform_index(static_cast<std::uint64_t>(pool.size(0))));
          net.codebook[k].copy_(pool[pick]);
          if (log) ++log->reseeded_codes;
        }
      }
      std::fill(usage.begin(), usage.end(), 0);
    }
    if (log) log->losses.push_back(value);
  }
  net.eval();

  CheckpointMeta meta;
  meta.stage_name = "prime_vq";
  meta.seed = rng.seed();
  meta.config_digest = config_digest({{"vq", to_json(config)}, {"stage", to_json(stage)}});
  meta.created_at = timestamp_now();
  return tokenizer.to_checkpoint(std::move(meta));
}

DatasetManifest rerepresent(const DatasetManifest& dataset, const VqTokenizer& tokenizer) {
  std::vector<ImageRecord> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records()) {
    auto q = tokenizer.quantize(tokenizer.encode(r.pixels));
    out.push_back(ImageRecord{tokenizer.decode(q.tokens), r.label, r.id, r.source_id});
  }
  return DatasetManifest(std::move(out), dataset.num_classes(), Provenance::re_represented, dataset.source_seed());
}

}  // namespace ota::vq

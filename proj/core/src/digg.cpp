// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/digg.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"
#include "ota/plot.hpp"

namespace ota::digg {

std::string_view to_string(MaskScheme scheme) noexcept {
  switch (scheme) {
    case MaskScheme::none: return "none";
    case MaskScheme::bottom_half: return "bottom_half";
    case MaskScheme::top_half: return "top_half";
    case MaskScheme::random_rows: return "random_rows";
    case MaskScheme::random_block: return "random_block";
  }
  return "unknown";
}

MaskScheme mask_scheme_from_string(std::string_view text) {
  for (auto s : {MaskScheme::none, MaskScheme::bottom_half, MaskScheme::top_half, MaskScheme::random_rows,
                 MaskScheme::random_block})
    if (text == to_string(s)) return s;
  throw ValidationError("unknown mask scheme '" + std::string(text) +
                        "' (none | bottom_half | top_half | random_rows | random_block)");
}

void MaskSpec::validate() const {
  if (randomized() && !(ratio > 0.0 && ratio < 1.0))
    throw ValidationError("mask ratio must lie in (0, 1), got " + std::to_string(ratio));
}

nlohmann::json to_json(const MaskSpec& spec) {
  return {{"scheme", std::string(to_string(spec.scheme))}, {"ratio", spec.ratio}};
}

MaskSpec mask_spec_from_json(const nlohmann::json& json, const MaskSpec& defaults, const std::string& context) {
  MaskSpec spec = defaults;
  JsonFields f(json, context);
  std::string scheme(to_string(spec.scheme));
  f.read("scheme", scheme);
  f.read("ratio", spec.ratio);
  f.finish();
  spec.scheme = mask_scheme_from_string(scheme);
  spec.validate();
  return spec;
}

MaskGrid make_mask(std::int64_t height, std::int64_t width, const MaskSpec& spec, SeededRng& rng) {
  if (height <= 0 || width <= 0) throw ShapeError("make_mask: grid must be non-empty");
  spec.validate();
  MaskGrid mask(height, width, std::uint8_t{0});
  const std::int64_t area = height * width;
  std::int64_t begin = 0, count = 0;
  switch (spec.scheme) {
    case MaskScheme::none:
      break;
    case MaskScheme::bottom_half:
      begin = (height / 2) * width;
      count = area - begin;
      break;
    case MaskScheme::top_half:
      count = (height / 2) * width;
      break;
    case MaskScheme::random_rows: {
      const auto cells = static_cast<std::int64_t>(std::floor(spec.ratio * static_cast<double>(area)));
      const auto rows = cells / width;
      if (rows > 0) begin = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(height - rows + 1))) * width;
      count = rows * width;
      break;
    }
    case MaskScheme::random_block: {
      count = static_cast<std::int64_t>(std::floor(spec.ratio * static_cast<double>(area)));
      if (count > 0) begin = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(area - count + 1)));
      break;
    }
  }
  for (std::int64_t i = begin; i < begin + count; ++i) mask[i] = 1;
  return mask;
}

void check_mask_fillable(const MaskGrid& mask) {
  const auto cells = mask.raster();
  std::size_t i = 0;
  while (i < cells.size() && !cells[i]) ++i;
  while (i < cells.size() && cells[i]) ++i;
  while (i < cells.size() && !cells[i]) ++i;
  if (i != cells.size())
    throw ValidationError("mask is scattered: masked cells must form one contiguous run in raster order");
}

std::vector<PseudoImage> generate_pseudo(const ImageRecord& x, std::int64_t n_variants, const vq::VqTokenizer& vq,
                                         const lt::LatentTransformer& lt, const GenerationOptions& options,
                                         SeededRng& rng, std::int64_t first_variant) {
  if (n_variants < 0) throw ValidationError("generate_pseudo: n_variants must be >= 0");
  options.mask.validate();
  std::vector<PseudoImage> out;
  if (n_variants == 0) return out;
  if (lt.config().vocab != vq.config().codebook_size)
    throw ShapeError("generate_pseudo: transformer vocabulary differs from the codebook size");

  const auto source_tokens = vq.tokenize(x.pixels);
  out.reserve(static_cast<std::size_t>(n_variants));
  for (std::int64_t k = 0; k < n_variants; ++k) {
    const auto v = first_variant + k;
    auto variant_rng = rng.derive(x.id + "/" + std::to_string(v));
    auto mask_rng = variant_rng.derive("mask");
    auto sample_rng = variant_rng.derive("sample");
    auto mask = make_mask(source_tokens.height(), source_tokens.width(), options.mask, mask_rng);
    check_mask_fillable(mask);
    auto tokens = lt::complete_tokens(source_tokens, mask, lt, options.sampling, sample_rng);
    out.push_back(PseudoImage{vq.decode(tokens), x.id, options.mask, std::move(mask), source_tokens,
                              std::move(tokens), v});
  }
  return out;
}

DatasetManifest build_distill_set(const DatasetManifest& d, std::int64_t target_count, const vq::VqTokenizer& vq,
                                  const lt::LatentTransformer& lt, const DistillSetOptions& options, SeededRng& rng) {
  if (d.empty()) throw ValidationError("build_distill_set: source dataset is empty");
  const auto n = static_cast<std::int64_t>(d.size());
  if (target_count < n)
    throw ValidationError("build_distill_set: target_count (" + std::to_string(target_count) +
                          ") must be at least the number of sources (" + std::to_string(n) + ")");

  // Variant-major cycling: slot t is variant t / n of source t % n.
  std::vector<std::int64_t> per_source(static_cast<std::size_t>(n), 0);
  for (std::int64_t i = 0; i < n; ++i) per_source[i] = target_count / n + (i < target_count % n ? 1 : 0);

  std::vector<std::vector<PseudoImage>> generated(static_cast<std::size_t>(n));
  auto work = [&](std::size_t i) {
    auto source_rng = rng;
    generated[i] = generate_pseudo(d[i], per_source[i], vq, lt, options.generation, source_rng);
  };
  const auto jobs = static_cast<std::size_t>(std::max(1, options.jobs));
  if (jobs == 1) {
    for (std::size_t i = 0; i < generated.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::min<std::size_t>(jobs, generated.size()); ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < generated.size(); i = next++) work(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(target_count));
  for (std::int64_t t = 0; t < target_count; ++t) {
    const auto i = static_cast<std::size_t>(t % n);
    const auto v = static_cast<std::size_t>(t / n);
    const auto& p = generated[i][v];
    records.push_back(ImageRecord{p.pixels, std::nullopt, p.source_id + "__v" + std::to_string(v), p.source_id});
  }

  if (!options.contact_sheet.empty()) {
    std::vector<std::vector<torch::Tensor>> rows;
    const auto shown = std::min<std::int64_t>(n, options.contact_sheet_rows);
    for (std::int64_t i = 0; i < shown; ++i) {
      std::vector<torch::Tensor> row{d[i].pixels};
      for (const auto& p : generated[i]) row.push_back(p.pixels);
      rows.push_back(std::move(row));
    }
    plot::write_contact_sheet(options.contact_sheet, rows);
  }
  return DatasetManifest(std::move(records), d.num_classes(), Provenance::pseudo, rng.seed());
}

}  // namespace ota::digg

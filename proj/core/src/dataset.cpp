// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "ota/error.hpp"
#include "ota/image_io.hpp"
#include "ota/json_fields.hpp"

namespace ota {
namespace fs = std::filesystem;

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::re_represented: return "re_represented";
    case Provenance::pseudo: return "pseudo";
  }
  return "original";
}

Provenance provenance_from_string(std::string_view text) {
  if (text == "original") return Provenance::original;
  if (text == "re_represented") return Provenance::re_represented;
  if (text == "pseudo") return Provenance::pseudo;
  throw ValidationError("unknown provenance '" + std::string(text) + "'");
}

DatasetManifest::DatasetManifest(std::vector<ImageRecord> records, std::int64_t num_classes,
                                 Provenance provenance, std::optional<std::uint64_t> source_seed)
    : records_(std::move(records)),
      num_classes_(num_classes),
      provenance_(provenance),
      source_seed_(source_seed) {
  if (num_classes_ < 0) throw ValidationError("num_classes must be non-negative");
  std::set<std::string> ids;
  for (const auto& r : records_) {
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
    if (!r.pixels.defined() || r.pixels.dim() != 3)
      throw ShapeError("record '" + r.id + "' must carry an H x W x C pixel tensor");
    ImageShape s{r.pixels.size(0), r.pixels.size(1), r.pixels.size(2)};
    if (&r == &records_.front()) {
      shape_ = s;
    } else if (s != shape_) {
      throw ShapeError("record '" + r.id + "' shape differs from the dataset shape");
    }
    if (r.label) {
      if (*r.label < 0 || *r.label >= num_classes_)
        throw ValidationError("record '" + r.id + "' has label " + std::to_string(*r.label) +
                              " outside [0, " + std::to_string(num_classes_) + ")");
    } else if (provenance_ != Provenance::pseudo) {
      throw ValidationError("record '" + r.id + "' is unlabeled but the dataset is not pseudo");
    }
  }
}

bool DatasetManifest::labeled() const noexcept {
  return std::all_of(records_.begin(), records_.end(), [](const ImageRecord& r) { return r.label.has_value(); });
}

DatasetManifest DatasetManifest::subset(std::span<const std::size_t> indices) const {
  std::vector<ImageRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(records_.at(i));
  return DatasetManifest(std::move(out), num_classes_, provenance_, source_seed_);
}

DatasetManifest DatasetManifest::with_provenance(Provenance p) const {
  return DatasetManifest(records_, num_classes_, p, source_seed_);
}

torch::Tensor DatasetManifest::images(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValidationError("cannot batch zero records");
  std::vector<torch::Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) parts.push_back(records_.at(i).pixels);
  return torch::stack(parts).permute({0, 3, 1, 2}).contiguous();
}

torch::Tensor DatasetManifest::images() const {
  std::vector<std::size_t> all(records_.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return images(all);
}

torch::Tensor DatasetManifest::labels(std::span<const std::size_t> indices) const {
  std::vector<std::int64_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const auto& r = records_.at(i);
    if (!r.label) throw ValidationError("record '" + r.id + "' has no label");
    out.push_back(*r.label);
  }
  return torch::tensor(out, torch::kInt64);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, '\t')) out.push_back(field);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

struct ManifestRow {
  std::string id;
  std::string path;
  std::optional<std::int64_t> label;
  std::optional<std::string> source_id;
};

}  // namespace

DatasetManifest load_dataset(const fs::path& root, const fs::path& manifest_file) {
  const fs::path manifest_path = manifest_file.is_absolute() ? manifest_file : root / manifest_file;
  std::ifstream in(manifest_path);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());

  std::string line;
  if (!std::getline(in, line)) throw LoadError("manifest " + manifest_path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "path" || header[2] != "label")
    throw LoadError("manifest header must start with id\\tpath\\tlabel");
  const bool has_source = header.size() >= 4 && header[3] == "source_id";

  std::vector<ManifestRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) throw LoadError("manifest line " + std::to_string(line_no) + " has fewer than 3 fields");
    ManifestRow row{fields[0], fields[1], std::nullopt, std::nullopt};
    if (!fields[2].empty() && fields[2] != "-") {
      try {
        std::size_t used = 0;
        row.label = std::stoll(fields[2], &used);
        if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ValidationError("record '" + row.id + "' has a non-integer label '" + fields[2] + "'");
      }
    }
    if (has_source && fields.size() >= 4 && !fields[3].empty()) row.source_id = fields[3];
    rows.push_back(std::move(row));
  }

  std::int64_t num_classes = 0;
  Provenance provenance = Provenance::original;
  std::optional<std::uint64_t> source_seed;
  const fs::path meta_path = root / "dataset.json";
  bool have_num_classes = false;
  if (fs::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("cannot parse " + meta_path.string() + ": " + e.what());
    }
    JsonFields fields(meta, "dataset.json");
    std::string prov = "original";
    fields.read("provenance", prov);
    provenance = provenance_from_string(prov);
    if (auto* nc = fields.child("num_classes")) {
      num_classes = nc->get<std::int64_t>();
      have_num_classes = true;
    }
    if (auto* seed = fields.child("source_seed"); seed && !seed->is_null()) source_seed = seed->get<std::uint64_t>();
    fields.child("shape");
    fields.child("count");
    fields.finish();
  }
  if (!have_num_classes) {
    for (const auto& r : rows)
      if (r.label) num_classes = std::max(num_classes, *r.label + 1);
  }

  std::vector<ImageRecord> records;
  records.reserve(rows.size());
  for (auto& row : rows) {
    const fs::path image_path = root / row.path;
    if (!fs::exists(image_path))
      throw LoadError("record '" + row.id + "': image file " + image_path.string() + " not found");
    torch::Tensor pixels;
    try {
      pixels = read_png(image_path);
    } catch (const LoadError& e) {
      throw LoadError("record '" + row.id + "': " + e.what());
    }
    if (row.label && *row.label >= num_classes)
      throw ValidationError("record '" + row.id + "' has label " + std::to_string(*row.label) +
                            " >= num_classes " + std::to_string(num_classes));
    records.push_back(ImageRecord{std::move(pixels), row.label, std::move(row.id), std::move(row.source_id)});
  }
  return DatasetManifest(std::move(records), num_classes, provenance, source_seed);
}

void save_dataset(const DatasetManifest& dataset, const fs::path& root) {
  fs::create_directories(root / "images");
  const bool with_source = std::any_of(dataset.records().begin(), dataset.records().end(),
                                       [](const ImageRecord& r) { return r.source_id.has_value(); });
  std::ofstream out(root / "manifest.tsv", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + root.string());
  out << "id\tpath\tlabel" << (with_source ? "\tsource_id" : "") << '\n';
  for (const auto& r : dataset.records()) {
    const std::string rel = "images/" + r.id + ".png";
    write_png(root / rel, r.pixels);
    out << r.id << '\t' << rel << '\t' << (r.label ? std::to_string(*r.label) : std::string("-"));
    if (with_source) out << '\t' << r.source_id.value_or("");
    out << '\n';
  }

  nlohmann::json meta{{"provenance", std::string(to_string(dataset.provenance()))},
                      {"num_classes", dataset.num_classes()},
                      {"count", dataset.size()},
                      {"shape", {dataset.shape().height, dataset.shape().width, dataset.shape().channels}}};
  meta["source_seed"] = dataset.source_seed() ? nlohmann::json(*dataset.source_seed()) : nlohmann::json(nullptr);
  std::ofstream meta_out(root / "dataset.json", std::ios::binary);
  meta_out << meta.dump(2) << '\n';
}

namespace {

std::size_t sample_count(double fraction, std::size_t n) {
  // The epsilon absorbs representation error, e.g. 0.07 * 100 = 7.000000000000001.
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, SeededRng& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    auto j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace

DatasetManifest sample_few_data(const DatasetManifest& dataset, double fraction, SeededRng& rng, bool stratified) {
  if (dataset.empty()) throw ValidationError("cannot sample from an empty dataset");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must lie in (0, 1]");
  const std::size_t n = dataset.size();
  if (sample_count(fraction, n) < 1) throw ValidationError("fraction * |records| must be at least 1");

  std::vector<std::size_t> chosen;
  if (!stratified) {
    chosen = choose_without_replacement(n, sample_count(fraction, n), rng);
  } else {
    std::map<std::int64_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[dataset[i].label.value_or(-1)].push_back(i);
    for (auto& [label, members] : by_class) {
      auto picks = choose_without_replacement(members.size(), sample_count(fraction, members.size()), rng);
      for (auto p : picks) chosen.push_back(members[p]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return dataset.subset(chosen);
}

std::pair<DatasetManifest, DatasetManifest> holdout_split(const DatasetManifest& dataset, double val_fraction,
                                                          SeededRng rng) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0, 1)");
  const std::size_t n = dataset.size();
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n))));
  if (n < 2 || n_val >= n)
    throw ValidationError("dataset of " + std::to_string(n) + " records is too small for a validation split");
  auto val = choose_without_replacement(n, n_val, rng);
  std::sort(val.begin(), val.end());
  std::vector<std::size_t> train;
  train.reserve(n - n_val);
  for (std::size_t i = 0, v = 0; i < n; ++i) {
    if (v < val.size() && val[v] == i) {
      ++v;
    } else {
      train.push_back(i);
    }
  }
  return {dataset.subset(train), dataset.subset(val)};
}

}  // namespace ota

// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/cli/pipeline.hpp"

#include <fstream>

#include "ota/digest.hpp"
#include "ota/error.hpp"
#include "ota/latent_transformer.hpp"
#include "ota/synthetic.hpp"
#include "ota/vq_tokenizer.hpp"

namespace ota::cli {
namespace fs = std::filesystem;

std::string dataset_digest(const DatasetManifest& d) {
  Sha256 h;
  h.update(std::string(to_string(d.provenance())) + "|" + std::to_string(d.num_classes()) + "\n");
  for (const auto& r : d.records()) {
    h.update(r.id + "|" + (r.label ? std::to_string(*r.label) : "-") + "|" + r.source_id.value_or("") + "\n");
    auto px = r.pixels.contiguous();
    h.update(std::span<const std::byte>(static_cast<const std::byte*>(px.data_ptr()), px.nbytes()));
  }
  const auto digest = h.finish();
  return to_hex(digest);
}

fs::path stage_dir(const fs::path& root, const std::string& stage, const nlohmann::json& key) {
  return root / (stage + "-" + sha256_hex(key.dump()).substr(0, 12));
}

RunDatasets load_run_datasets(const RunConfig& config) {
  RunDatasets out;
  const auto& d = config.data;
  DatasetManifest downstream;
  if (d.source == "synthetic") {
    SeededRng up(config.seeds.master, "data/upstream");
    SeededRng down(config.seeds.master, "data/downstream");
    SeededRng test(config.seeds.master, "data/test");
    out.upstream = synth::make_shapes(synth::Domain::a, d.upstream_shapes, up);
    downstream = synth::make_shapes(synth::Domain::b, d.downstream_shapes, down);
    out.test = synth::make_shapes(synth::Domain::b, d.test_shapes, test);
  } else {
    out.upstream = load_dataset(d.upstream);
    downstream = load_dataset(d.downstream);
    if (!d.test.empty()) out.test = load_dataset(d.test);
  }
  if (d.few_fraction < 1.0) {
    SeededRng few(config.seeds.master, "data/few");
    downstream = sample_few_data(downstream, d.few_fraction, few, d.stratified);
  }
  out.downstream = std::move(downstream);
  return out;
}

PrimeArtifacts prime_all(const RunConfig& config, const DatasetManifest& upstream, const fs::path& root) {
  const bool want_student = config.distill.student_init == distill::StudentInit::upstream;
  nlohmann::json key{{"vq", vq::to_json(config.vq.model)},
                     {"vq_train", to_json(config.vq.train)},
                     {"lt", lt::to_json(config.lt.model)},
                     {"lt_train", to_json(config.lt.train)},
                     {"backbone", to_json(config.backbone.model)},
                     {"pretrain", to_json(config.backbone.pretrain)},
                     {"upstream", dataset_digest(upstream)},
                     {"seed", config.seeds.master}};
  if (want_student) key["student"] = to_json(config.distill.student);

  PrimeArtifacts a;
  a.dir = stage_dir(root, "prime", key);
  const auto vq_path = a.dir / "vq.ckpt";
  const auto lt_path = a.dir / "lt.ckpt";
  const auto bb_path = a.dir / "backbone.ckpt";
  const auto st_path = a.dir / "student_backbone.ckpt";
  if (fs::exists(vq_path) && fs::exists(lt_path) && fs::exists(bb_path) && (!want_student || fs::exists(st_path))) {
    a.vq = load_checkpoint(vq_path);
    a.lt = load_checkpoint(lt_path);
    a.backbone = load_checkpoint(bb_path);
    if (want_student) a.student_backbone = load_checkpoint(st_path);
    a.reused = true;
    return a;
  }

  fs::create_directories(a.dir);
  nlohmann::json report{{"key", key}};
  try {
    SeededRng vq_rng(config.seeds.master, "prime_vq");
    vq::VqTrainLog vq_log;
    a.vq = vq::train_vq(upstream, config.vq.model, config.vq.train, vq_rng, &vq_log);
    report["vq_losses"] = vq_log.losses;
    report["vq_reseeded_codes"] = vq_log.reseeded_codes;

    auto tokenizer = vq::VqTokenizer::from_checkpoint(a.vq);
    std::vector<TokenGrid> tokens;
    tokens.reserve(upstream.size());
    for (const auto& r : upstream.records()) tokens.push_back(tokenizer.tokenize(r.pixels));
    SeededRng lt_rng(config.seeds.master, "prime_lt");
    lt::LtTrainLog lt_log;
    a.lt = lt::train_lt(tokens, config.lt.model, config.lt.train, lt_rng, &lt_log);
    report["lt_losses"] = lt_log.losses;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError("prime", e.what());
  }
  try {
    SeededRng bb_rng(config.seeds.master, "pretrain");
    a.backbone = irf::pretrain_backbone(upstream, config.backbone.model, config.backbone.pretrain, bb_rng);
    if (want_student) {
      SeededRng st_rng(config.seeds.master, "pretrain_student");
      a.student_backbone = irf::pretrain_backbone(upstream, config.distill.student, config.backbone.pretrain, st_rng);
    }
  } catch (const std::exception& e) {
    throw StageError("pretrain", e.what());
  }

  save_checkpoint(a.vq, vq_path);
  save_checkpoint(a.lt, lt_path);
  save_checkpoint(a.backbone, bb_path);
  if (a.student_backbone) save_checkpoint(*a.student_backbone, st_path);
  std::ofstream(a.dir / "prime.report.json", std::ios::binary) << report.dump(2) << '\n';
  return a;
}

distill::OtaOptions ota_options(const RunConfig& c, int jobs) {
  distill::OtaOptions o;
  o.irf.stage3 = c.irf.stage3;
  o.irf.stage4 = c.irf.stage4;
  o.irf.delivering = c.irf.delivering;
  o.irf.calibration = c.irf.calibration;
  o.irf.val_fraction = c.irf.val_fraction;
  o.irf.jobs = jobs;
  o.finetune = c.distill.finetune;
  o.finetune_options = {c.distill.lp_then_ft, jobs, c.irf.val_fraction};
  o.target_count = c.digg.target_count;
  o.digg.generation = {c.digg.mask, c.lt.sampling};
  o.digg.jobs = jobs;
  o.digg.contact_sheet_rows = c.digg.contact_sheet_rows;
  o.distill = c.distill.config;
  o.student = c.distill.student;
  o.student_init = c.distill.student_init;
  return o;
}

RunManifest::RunManifest(std::string command, nlohmann::json config_layers, const RunConfig& config)
    : command_(std::move(command)), layers_(std::move(config_layers)), config_(to_json(config)) {}

void RunManifest::add(const fs::path& path) { artifacts_.push_back(path); }

void RunManifest::write(const fs::path& dir) const {
  nlohmann::json artifacts = nlohmann::json::array();
  for (const auto& p : artifacts_) {
    std::ifstream in(p, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::error_code ec;
    auto rel = fs::relative(p, dir, ec);
    artifacts.push_back({{"path", (ec || rel.empty() ? p : rel).generic_string()}, {"sha256", sha256_hex(bytes)}});
  }
  nlohmann::json m{{"command", command_},
                   {"config", config_},
                   {"config_digest", config_digest(config_)},
                   {"config_layers", layers_},
                   {"artifacts", artifacts},
                   {"notes", notes_}};
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json", std::ios::binary) << m.dump(2) << '\n';
}

}  // namespace ota::cli

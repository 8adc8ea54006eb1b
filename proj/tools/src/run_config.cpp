// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/cli/run_config.hpp"

#include <fstream>

#include "ota/error.hpp"
#include "ota/json_fields.hpp"

namespace ota::cli {

namespace {

StageConfig adam_stage(std::int64_t steps, std::int64_t batch, double lr) {
  StageConfig c;
  c.steps = steps;
  c.batch_size = batch;
  c.optimizer = {OptimizerKind::adam, 0.0, 0.0};
  c.lr_schedule = {lr, {0.6, 0.9}, 0.1};
  c.lr_grid = {lr};
  c.wd_grid = {0.0};
  c.input = {32, 32};
  return c;
}

nlohmann::json shapes_json(const synth::ShapesConfig& s) {
  return {{"count", s.count},
          {"num_classes", s.num_classes},
          {"image_size", s.image_size},
          {"noise", s.noise},
          {"id_prefix", s.id_prefix}};
}

synth::ShapesConfig shapes_from_json(const nlohmann::json& j, synth::ShapesConfig s, const std::string& ctx) {
  JsonFields f(j, ctx);
  f.read("count", s.count).read("num_classes", s.num_classes).read("image_size", s.image_size);
  f.read("noise", s.noise).read("id_prefix", s.id_prefix);
  f.finish();
  s.validate();
  return s;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.vq.train = adam_stage(1500, 32, 2e-3);
  c.lt.train = adam_stage(2000, 32, 1e-3);
  c.backbone.pretrain = irf::default_pretrain_config();
  c.irf.stage3 = irf::default_stage3_config();
  c.irf.stage4 = irf::default_stage4_config();
  c.irf.baseline = irf::default_baseline_config();
  c.distill.finetune = irf::default_stage4_config();
  return c;
}

void RunConfig::validate() const {
  if (data.source != "synthetic" && data.source != "directory")
    throw ValidationError("data.source must be 'synthetic' or 'directory'");
  if (data.source == "directory" && (data.upstream.empty() || data.downstream.empty()))
    throw ValidationError("data.source = directory needs data.upstream and data.downstream");
  if (!(data.few_fraction > 0.0 && data.few_fraction <= 1.0)) throw ValidationError("data.few_fraction must lie in (0, 1]");
  vq.model.validate();
  lt.model.validate();
  if (lt.model.vocab != vq.model.codebook_size)
    throw ValidationError("lt.model.vocab (" + std::to_string(lt.model.vocab) + ") must equal vq.model.codebook_size (" +
                          std::to_string(vq.model.codebook_size) + ")");
  const auto area = vq.model.grid_side() * vq.model.grid_side();
  if (lt.model.context != area)
    throw ValidationError("lt.model.context (" + std::to_string(lt.model.context) +
                          ") must equal the token grid area (" + std::to_string(area) + ")");
  lt.sampling.validate(lt.model.vocab);
  vq.train.validate_allow_zero_steps();
  lt.train.validate_allow_zero_steps();
  backbone.model.validate();
  backbone.pretrain.validate_allow_zero_steps();
  irf.stage3.validate_allow_zero_steps();
  irf.stage4.validate_allow_zero_steps();
  irf.baseline.validate_allow_zero_steps();
  if (!(irf.val_fraction > 0.0 && irf.val_fraction < 1.0)) throw ValidationError("irf.val_fraction must lie in (0, 1)");
  digg.mask.validate();
  if (digg.target_count < 1) throw ValidationError("digg.target_count must be >= 1");
  distill.config.validate();
  distill.student.validate();
  distill.finetune.validate_allow_zero_steps();
  if (metrics.resize < 1) throw ValidationError("metrics.resize must be >= 1");
  if (output_dir.empty()) throw ValidationError("output_dir must not be empty");
}

nlohmann::json to_json(const RunConfig& c) {
  return {
      {"data",
       {{"source", c.data.source},
        {"upstream", c.data.upstream},
        {"downstream", c.data.downstream},
        {"test", c.data.test},
        {"name", c.data.name},
        {"few_fraction", c.data.few_fraction},
        {"stratified", c.data.stratified},
        {"upstream_shapes", shapes_json(c.data.upstream_shapes)},
        {"downstream_shapes", shapes_json(c.data.downstream_shapes)},
        {"test_shapes", shapes_json(c.data.test_shapes)}}},
      {"vq", {{"model", vq::to_json(c.vq.model)}, {"train", to_json(c.vq.train)}}},
      {"lt",
       {{"model", lt::to_json(c.lt.model)},
        {"train", to_json(c.lt.train)},
        {"sampling", {{"temperature", c.lt.sampling.temperature}, {"top_k", c.lt.sampling.top_k}}}}},
      {"backbone", {{"model", to_json(c.backbone.model)}, {"pretrain", to_json(c.backbone.pretrain)}}},
      {"irf",
       {{"stage3", to_json(c.irf.stage3)},
        {"stage4", to_json(c.irf.stage4)},
        {"baseline", to_json(c.irf.baseline)},
        {"delivering", std::string(irf::to_string(c.irf.delivering))},
        {"calibration", std::string(irf::to_string(c.irf.calibration))},
        {"val_fraction", c.irf.val_fraction}}},
      {"digg",
       {{"mask", digg::to_json(c.digg.mask)},
        {"target_count", c.digg.target_count},
        {"contact_sheet_rows", c.digg.contact_sheet_rows}}},
      {"distill",
       {{"config", distill::to_json(c.distill.config)},
        {"student", to_json(c.distill.student)},
        {"student_init", std::string(distill::to_string(c.distill.student_init))},
        {"finetune", to_json(c.distill.finetune)},
        {"lp_then_ft", c.distill.lp_then_ft}}},
      {"metrics", {{"resize", c.metrics.resize}}},
      {"seeds", {{"master", c.seeds.master}}},
      {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const nlohmann::json& json, const RunConfig& base) {
  RunConfig c = base;
  JsonFields root(json, "config");
  if (const auto* d = root.child("data")) {
    JsonFields f(*d, "data");
    f.read("source", c.data.source).read("upstream", c.data.upstream).read("downstream", c.data.downstream);
    f.read("test", c.data.test).read("name", c.data.name).read("few_fraction", c.data.few_fraction);
    f.read("stratified", c.data.stratified);
    if (const auto* s = f.child("upstream_shapes"))
      c.data.upstream_shapes = shapes_from_json(*s, c.data.upstream_shapes, "data.upstream_shapes");
    if (const auto* s = f.child("downstream_shapes"))
      c.data.downstream_shapes = shapes_from_json(*s, c.data.downstream_shapes, "data.downstream_shapes");
    if (const auto* s = f.child("test_shapes"))
      c.data.test_shapes = shapes_from_json(*s, c.data.test_shapes, "data.test_shapes");
    f.finish();
  }
  if (const auto* v = root.child("vq")) {
    JsonFields f(*v, "vq");
    if (const auto* m = f.child("model")) c.vq.model = vq::vq_config_from_json(*m, c.vq.model, "vq.model");
    if (const auto* t = f.child("train")) c.vq.train = stage_config_from_json(*t, c.vq.train, "vq.train");
    f.finish();
  }
  if (const auto* l = root.child("lt")) {
    JsonFields f(*l, "lt");
    if (const auto* m = f.child("model")) c.lt.model = lt::lt_config_from_json(*m, c.lt.model, "lt.model");
    if (const auto* t = f.child("train")) c.lt.train = stage_config_from_json(*t, c.lt.train, "lt.train");
    if (const auto* s = f.child("sampling")) {
      JsonFields g(*s, "lt.sampling");
      g.read("temperature", c.lt.sampling.temperature).read("top_k", c.lt.sampling.top_k);
      g.finish();
    }
    f.finish();
  }
  if (const auto* b = root.child("backbone")) {
    JsonFields f(*b, "backbone");
    if (const auto* m = f.child("model"))
      c.backbone.model = backbone_config_from_json(*m, c.backbone.model, "backbone.model");
    if (const auto* t = f.child("pretrain"))
      c.backbone.pretrain = stage_config_from_json(*t, c.backbone.pretrain, "backbone.pretrain");
    f.finish();
  }
  if (const auto* i = root.child("irf")) {
    JsonFields f(*i, "irf");
    if (const auto* s = f.child("stage3")) c.irf.stage3 = stage_config_from_json(*s, c.irf.stage3, "irf.stage3");
    if (const auto* s = f.child("stage4")) c.irf.stage4 = stage_config_from_json(*s, c.irf.stage4, "irf.stage4");
    if (const auto* s = f.child("baseline"))
      c.irf.baseline = stage_config_from_json(*s, c.irf.baseline, "irf.baseline");
    std::string delivering(irf::to_string(c.irf.delivering)), calibration(irf::to_string(c.irf.calibration));
    f.read("delivering", delivering).read("calibration", calibration).read("val_fraction", c.irf.val_fraction);
    c.irf.delivering = irf::data_choice_from_string(delivering);
    c.irf.calibration = irf::data_choice_from_string(calibration);
    f.finish();
  }
  if (const auto* g = root.child("digg")) {
    JsonFields f(*g, "digg");
    if (const auto* m = f.child("mask")) c.digg.mask = digg::mask_spec_from_json(*m, c.digg.mask, "digg.mask");
    f.read("target_count", c.digg.target_count).read("contact_sheet_rows", c.digg.contact_sheet_rows);
    f.finish();
  }
  if (const auto* d = root.child("distill")) {
    JsonFields f(*d, "distill");
    if (const auto* m = f.child("config"))
      c.distill.config = distill::distill_config_from_json(*m, c.distill.config, "distill.config");
    if (const auto* m = f.child("student"))
      c.distill.student = backbone_config_from_json(*m, c.distill.student, "distill.student");
    if (const auto* m = f.child("finetune"))
      c.distill.finetune = stage_config_from_json(*m, c.distill.finetune, "distill.finetune");
    std::string init(distill::to_string(c.distill.student_init));
    f.read("student_init", init).read("lp_then_ft", c.distill.lp_then_ft);
    c.distill.student_init = distill::student_init_from_string(init);
    f.finish();
  }
  if (const auto* m = root.child("metrics")) {
    JsonFields f(*m, "metrics");
    f.read("resize", c.metrics.resize);
    f.finish();
  }
  if (const auto* s = root.child("seeds")) {
    JsonFields f(*s, "seeds");
    f.read("master", c.seeds.master);
    f.finish();
  }
  root.read("output_dir", c.output_dir);
  root.finish();
  return c;
}

void set_dotted(nlohmann::json& doc, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ValidationError("empty config key");
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const auto part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("malformed config key '" + dotted_key + "'");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

ResolvedConfig resolve_config(const std::filesystem::path& config_file, const nlohmann::json& flag_overrides) {
  ResolvedConfig r;
  const auto defaults = default_run_config();
  r.layers["defaults"] = to_json(defaults);
  RunConfig config = defaults;
  if (!config_file.empty()) {
    std::ifstream in(config_file, std::ios::binary);
    if (!in) throw LoadError("cannot read config file " + config_file.string());
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(config_file.string() + ": " + e.what());
    }
    config = run_config_from_json(file, config);
    r.layers["file"] = {{"path", config_file.string()}, {"values", file}};
  } else {
    r.layers["file"] = nullptr;
  }
  if (!flag_overrides.empty()) config = run_config_from_json(flag_overrides, config);
  r.layers["flags"] = flag_overrides.empty() ? nlohmann::json::object() : flag_overrides;
  r.layers["precedence"] = {"flags", "file", "defaults"};
  config.validate();
  r.config = std::move(config);
  return r;
}

}  // namespace ota::cli

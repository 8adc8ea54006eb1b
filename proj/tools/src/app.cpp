// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include "ota/cli/app.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "ota/checkpoint.hpp"
#include "ota/cli/pipeline.hpp"
#include "ota/cli/run_config.hpp"
#include "ota/error.hpp"
#include "ota/metrics.hpp"
#include "ota/nn_utils.hpp"
#include "ota/plot.hpp"

namespace ota::cli {
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set irf.stage4.steps=50");
  sub->add_option("--seed", c.seed, "Master seed (seeds.master)");
  sub->add_option("--out", c.out, "Output directory (output_dir)");
  sub->add_option("--jobs", c.jobs, "Worker cap for grid trials and generation")->check(CLI::PositiveNumber);
}

ResolvedConfig resolve(const Common& c, const nlohmann::json& extra_flags = nlohmann::json::object()) {
  nlohmann::json flags = extra_flags;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expects key=value, got '" + s + "'");
    set_dotted(flags, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) flags["seeds"]["master"] = *c.seed;
  if (!c.out.empty()) flags["output_dir"] = c.out;
  return resolve_config(c.config, flags);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

CheckpointMeta meta_for(const std::string& stage, const RunConfig& config) {
  CheckpointMeta m;
  m.stage_name = stage;
  m.seed = config.seeds.master;
  m.config_digest = config_digest(to_json(config));
  m.created_at = timestamp_now();
  return m;
}

/// Re-stamps a stage checkpoint with the run config digest and saves it.
void save_stage(Checkpoint ckpt, const RunConfig& config, const fs::path& path, RunManifest& manifest) {
  ckpt.meta.extra["run_config_digest"] = config_digest(to_json(config));
  save_checkpoint(ckpt, path);
  manifest.add(path);
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"One-stop transfer toolkit: re-representation fine-tuning, guided generation and distillation"};
  app.name("ota");
  app.require_subcommand(1);
  Context ctx{out, err};
  std::function<int()> action;

  // synth ------------------------------------------------------------------
  std::string synth_domain = "a";
  synth::ShapesConfig synth_cfg;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic two-domain shapes dataset");
  synth_cmd->add_option("--domain", synth_domain, "a (warm, dark), b (cool, light) or c (cool, dark)")
      ->check(CLI::IsMember({"a", "b", "c"}));
  synth_cmd->add_option("--count", synth_cfg.count);
  synth_cmd->add_option("--classes", synth_cfg.num_classes);
  synth_cmd->add_option("--size", synth_cfg.image_size);
  synth_cmd->add_option("--prefix", synth_cfg.id_prefix);
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--out", synth_out)->required();
  synth_cmd->callback([&] {
    action = [&] {
      SeededRng rng(synth_seed, "synth/" + synth_domain);
      auto d = synth::make_shapes(synth::domain_from_string(synth_domain), synth_cfg, rng);
      save_dataset(d, synth_out);
      ctx.out << "wrote " << d.size() << " records to " << synth_out << '\n';
      return kExitOk;
    };
  });

  // prime ------------------------------------------------------------------
  Common prime_c;
  std::string prime_data;
  auto* prime_cmd = app.add_subcommand("prime", "Stage 1: train the tokenizer, latent transformer and upstream backbone");
  add_common(prime_cmd, prime_c);
  prime_cmd->add_option("--data", prime_data, "Upstream dataset directory (default: from config)");
  prime_cmd->callback([&] {
    action = [&] {
      auto r = resolve(prime_c);
      const auto& cfg = r.config;
      DatasetManifest upstream = prime_data.empty() ? load_run_datasets(cfg).upstream : load_dataset(prime_data);
      auto a = prime_all(cfg, upstream, cfg.output_dir);
      RunManifest m("prime", r.layers, cfg);
      for (auto name : {"vq.ckpt", "lt.ckpt", "backbone.ckpt"}) m.add(a.dir / name);
      if (a.student_backbone) m.add(a.dir / "student_backbone.ckpt");
      m.add_note("reused", a.reused);
      m.write(a.dir);
      ctx.out << a.dir.string() << (a.reused ? " (reused)" : "") << '\n';
      return kExitOk;
    };
  });

  // assemble ---------------------------------------------------------------
  Common asm_c;
  std::string asm_vq, asm_data;
  auto* asm_cmd = app.add_subcommand("assemble", "Stage 2: re-represent a dataset through the tokenizer");
  add_common(asm_cmd, asm_c);
  asm_cmd->add_option("--vq", asm_vq)->required()->check(CLI::ExistingFile);
  asm_cmd->add_option("--data", asm_data)->required()->check(CLI::ExistingDirectory);
  asm_cmd->callback([&] {
    action = [&] {
      auto r = resolve(asm_c);
      auto tokenizer = vq::VqTokenizer::from_checkpoint(load_checkpoint(asm_vq));
      auto rerep = vq::rerepresent(load_dataset(asm_data), tokenizer);
      const fs::path dir = r.config.output_dir;
      save_dataset(rerep, dir);
      RunManifest m("assemble", r.layers, r.config);
      m.add(dir / "manifest.tsv");
      m.add(dir / "dataset.json");
      m.write(dir);
      ctx.out << "re-represented " << rerep.size() << " records into " << dir.string() << '\n';
      return kExitOk;
    };
  });

  // deliver / calibrate ----------------------------------------------------
  Common del_c;
  std::string del_backbone, del_data, del_choice = "re_represented";
  auto* del_cmd = app.add_subcommand("deliver", "Stage 3: train the head on re-represented data, backbone frozen");
  add_common(del_cmd, del_c);
  del_cmd->add_option("--backbone", del_backbone)->required()->check(CLI::ExistingFile);
  del_cmd->add_option("--data", del_data)->required()->check(CLI::ExistingDirectory);
  del_cmd->add_option("--delivering-data", del_choice, "re_represented (default) or original (ablation)")
      ->check(CLI::IsMember({"original", "re_represented"}));
  del_cmd->callback([&] {
    action = [&] {
      auto r = resolve(del_c, {{"irf", {{"delivering", del_choice}}}});
      const auto& cfg = r.config;
      auto data = load_dataset(del_data);
      SeededRng rng(cfg.seeds.master, "deliver");
      auto head_rng = rng.derive("head");
      auto model = TaskModel::from_backbone(load_checkpoint(del_backbone), data.num_classes(), head_rng);
      model.set_freeze_policy(FreezePolicy::backbone_frozen);
      irf::StageOptions opts{cfg.irf.val_fraction, cfg.irf.delivering == irf::DataChoice::original, del_c.jobs};
      if (cfg.irf.delivering == irf::DataChoice::original && data.provenance() != Provenance::original)
        throw ProvenanceError("--delivering-data original needs original data");
      auto result = irf::stage3_deliver(model, data, cfg.irf.stage3, rng, opts);
      const fs::path dir = cfg.output_dir;
      RunManifest m("deliver", r.layers, cfg);
      save_stage(result.checkpoint, cfg, dir / "stage3_deliver.ckpt", m);
      irf::write_stage_report(dir, "stage3_deliver", cfg.irf.stage3, cfg.seeds.master,
                              {{"grid", irf::to_json(result.grid)}, {"delivering_data", del_choice}}, result.trace);
      m.add(dir / "stage3_deliver.report.json");
      m.write(dir);
      ctx.out << irf::to_json(result.grid).dump() << '\n';
      return kExitOk;
    };
  });

  Common cal_c;
  std::string cal_model, cal_data, cal_choice = "original";
  auto* cal_cmd = app.add_subcommand("calibrate", "Stage 4: fine-tune every parameter on original data");
  add_common(cal_cmd, cal_c);
  cal_cmd->add_option("--model", cal_model, "Stage-3 checkpoint")->required()->check(CLI::ExistingFile);
  cal_cmd->add_option("--data", cal_data)->required()->check(CLI::ExistingDirectory);
  cal_cmd->add_option("--calibration-data", cal_choice, "original (default) or re_represented (ablation)")
      ->check(CLI::IsMember({"original", "re_represented"}));
  cal_cmd->callback([&] {
    action = [&] {
      auto r = resolve(cal_c, {{"irf", {{"calibration", cal_choice}}}});
      const auto& cfg = r.config;
      auto data = load_dataset(cal_data);
      SeededRng rng(cfg.seeds.master, "calibrate");
      auto warm = TaskModel::from_checkpoint(load_checkpoint(cal_model));
      irf::StageOptions opts{cfg.irf.val_fraction, cfg.irf.calibration == irf::DataChoice::re_represented, cal_c.jobs};
      auto result = irf::stage4_calibrate(warm, data, cfg.irf.stage4, rng, opts);
      const fs::path dir = cfg.output_dir;
      RunManifest m("calibrate", r.layers, cfg);
      save_stage(result.checkpoint, cfg, dir / "stage4_calibrate.ckpt", m);
      irf::write_stage_report(dir, "stage4_calibrate", cfg.irf.stage4, cfg.seeds.master,
                              {{"grid", irf::to_json(result.grid)}, {"calibration_data", cal_choice}}, result.trace);
      m.add(dir / "stage4_calibrate.report.json");
      m.write(dir);
      ctx.out << irf::to_json(result.grid).dump() << '\n';
      return kExitOk;
    };
  });

  // irf --------------------------------------------------------------------
  Common irf_c;
  std::string irf_backbone, irf_vq, irf_data, irf_test, irf_deliver = "re_represented", irf_calib = "original";
  auto* irf_cmd = app.add_subcommand("irf", "Stages 2 to 4 on one downstream dataset");
  add_common(irf_cmd, irf_c);
  irf_cmd->add_option("--backbone", irf_backbone)->required()->check(CLI::ExistingFile);
  irf_cmd->add_option("--vq", irf_vq)->required()->check(CLI::ExistingFile);
  irf_cmd->add_option("--data", irf_data)->required()->check(CLI::ExistingDirectory);
  irf_cmd->add_option("--test", irf_test)->check(CLI::ExistingDirectory);
  irf_cmd->add_option("--delivering-data", irf_deliver)->check(CLI::IsMember({"original", "re_represented"}));
  irf_cmd->add_option("--calibration-data", irf_calib)->check(CLI::IsMember({"original", "re_represented"}));
  irf_cmd->callback([&] {
    action = [&] {
      auto r = resolve(irf_c, {{"irf", {{"delivering", irf_deliver}, {"calibration", irf_calib}}}});
      const auto& cfg = r.config;
      irf::IrfOptions opts{cfg.irf.stage3, cfg.irf.stage4, cfg.irf.delivering, cfg.irf.calibration,
                           cfg.irf.val_fraction, irf_c.jobs, fs::path(cfg.output_dir)};
      SeededRng rng(cfg.seeds.master, "irf");
      auto result = irf::run_irf(load_checkpoint(irf_backbone), load_dataset(irf_data), load_checkpoint(irf_vq), opts, rng);
      const fs::path dir = cfg.output_dir;
      if (!irf_test.empty()) {
        auto model = TaskModel::from_checkpoint(result.stage4.checkpoint);
        result.report["test_top1"] = top1(model, load_dataset(irf_test), cfg.metrics.resize);
        write_json(dir / "irf.report.json", result.report);
      }
      RunManifest m("irf", r.layers, cfg);
      for (auto name : {"stage2_assemble.ckpt", "stage3_deliver.ckpt", "stage4_calibrate.ckpt", "irf.report.json"})
        m.add(dir / name);
      m.write(dir);
      ctx.out << result.report.dump() << '\n';
      return kExitOk;
    };
  });

  // baseline ---------------------------------------------------------------
  Common base_c;
  std::string base_method = "finetune", base_backbone, base_data, base_test;
  auto* base_cmd = app.add_subcommand("baseline", "Linear-probe or fine-tune baseline on original data");
  add_common(base_cmd, base_c);
  base_cmd->add_option("--method", base_method)->check(CLI::IsMember({"linear_probe", "finetune"}));
  base_cmd->add_option("--backbone", base_backbone)->required()->check(CLI::ExistingFile);
  base_cmd->add_option("--data", base_data)->required()->check(CLI::ExistingDirectory);
  base_cmd->add_option("--test", base_test)->check(CLI::ExistingDirectory);
  base_cmd->callback([&] {
    action = [&] {
      auto r = resolve(base_c);
      const auto& cfg = r.config;
      auto data = load_dataset(base_data);
      SeededRng rng(cfg.seeds.master, "baseline/" + base_method);
      irf::StageOptions opts{cfg.irf.val_fraction, false, base_c.jobs};
      auto backbone = load_checkpoint(base_backbone);
      auto result = base_method == "finetune" ? irf::finetune(backbone, data, cfg.irf.baseline, rng, opts)
                                              : irf::linear_probe(backbone, data, cfg.irf.baseline, rng, opts);
      const double acc = base_test.empty()
                             ? result.grid.winner_trial().val_metric
                             : top1(TaskModel::from_checkpoint(result.checkpoint), load_dataset(base_test),
                                    cfg.metrics.resize);
      auto report = irf::baseline_report(base_method, cfg.data.name, acc, result);
      report["top1_source"] = base_test.empty() ? "validation" : "test";
      const fs::path dir = cfg.output_dir;
      RunManifest m("baseline", r.layers, cfg);
      save_stage(result.checkpoint, cfg, dir / (base_method + ".ckpt"), m);
      write_json(dir / "baseline.report.json", report);
      m.add(dir / "baseline.report.json");
      m.write(dir);
      ctx.out << report.dump() << '\n';
      return kExitOk;
    };
  });

  // digg -------------------------------------------------------------------
  Common digg_c;
  std::string digg_vq, digg_lt, digg_data;
  std::optional<std::int64_t> digg_target;
  auto* digg_cmd = app.add_subcommand("digg", "Generate a pseudo-image distillation corpus");
  add_common(digg_cmd, digg_c);
  digg_cmd->add_option("--vq", digg_vq)->required()->check(CLI::ExistingFile);
  digg_cmd->add_option("--lt", digg_lt)->required()->check(CLI::ExistingFile);
  digg_cmd->add_option("--data", digg_data)->required()->check(CLI::ExistingDirectory);
  digg_cmd->add_option("--target", digg_target, "Number of pseudo-images (digg.target_count)");
  digg_cmd->callback([&] {
    action = [&] {
      nlohmann::json flags = nlohmann::json::object();
      if (digg_target) flags["digg"]["target_count"] = *digg_target;
      auto r = resolve(digg_c, flags);
      const auto& cfg = r.config;
      const fs::path dir = cfg.output_dir;
      auto tokenizer = vq::VqTokenizer::from_checkpoint(load_checkpoint(digg_vq));
      auto transformer = lt::LatentTransformer::from_checkpoint(load_checkpoint(digg_lt));
      digg::DistillSetOptions opts{{cfg.digg.mask, cfg.lt.sampling}, digg_c.jobs, dir / "contact_sheet.png",
                                   cfg.digg.contact_sheet_rows};
      SeededRng rng(cfg.seeds.master, "digg");
      auto corpus = digg::build_distill_set(load_dataset(digg_data), cfg.digg.target_count, tokenizer, transformer,
                                            opts, rng);
      save_dataset(corpus, dir);
      RunManifest m("digg", r.layers, cfg);
      m.add(dir / "manifest.tsv");
      m.add(dir / "dataset.json");
      m.add(dir / "contact_sheet.png");
      m.write(dir);
      ctx.out << "generated " << corpus.size() << " pseudo-images into " << dir.string() << '\n';
      return kExitOk;
    };
  });

  // distill ----------------------------------------------------------------
  Common dist_c;
  std::string dist_teacher, dist_corpus, dist_student_init, dist_student_backbone;
  auto* dist_cmd = app.add_subcommand("distill", "Feature-level distillation of a teacher backbone into a student");
  add_common(dist_cmd, dist_c);
  dist_cmd->add_option("--teacher", dist_teacher)->required()->check(CLI::ExistingFile);
  dist_cmd->add_option("--corpus", dist_corpus)->required()->check(CLI::ExistingDirectory);
  dist_cmd->add_option("--student-init", dist_student_init, "random (default) or upstream")
      ->check(CLI::IsMember({"random", "upstream"}));
  dist_cmd->add_option("--student-backbone", dist_student_backbone, "Upstream student checkpoint for --student-init upstream")
      ->check(CLI::ExistingFile);
  dist_cmd->callback([&] {
    action = [&] {
      nlohmann::json flags = nlohmann::json::object();
      if (!dist_student_init.empty()) flags["distill"]["student_init"] = dist_student_init;
      auto r = resolve(dist_c, flags);
      const auto& cfg = r.config;
      auto corpus = load_dataset(dist_corpus);
      SeededRng rng(cfg.seeds.master, "distill");
      auto student_rng = rng.derive("student");
      std::optional<TaskModel> student;
      if (cfg.distill.student_init == distill::StudentInit::upstream) {
        if (dist_student_backbone.empty()) throw ValidationError("--student-init upstream needs --student-backbone");
        auto head_rng = student_rng.derive("head");
        student = TaskModel::from_backbone(load_checkpoint(dist_student_backbone), corpus.num_classes(), head_rng);
      } else {
        student = TaskModel::initialize(cfg.distill.student, corpus.num_classes(), student_rng);
      }
      auto train_rng = rng.derive("train");
      auto result = distill::distill(load_checkpoint(dist_teacher), *student, corpus, cfg.distill.config, train_rng);
      const fs::path dir = cfg.output_dir;
      RunManifest m("distill", r.layers, cfg);
      save_stage(result.student, cfg, dir / "student.ckpt", m);
      save_stage(result.adapter, cfg, dir / "adapter.ckpt", m);
      nlohmann::json report{{"epoch_losses", result.epoch_losses},
                            {"initial_loss", result.initial_loss},
                            {"teacher_checksum_before", result.teacher_checksum_before},
                            {"teacher_checksum_after", result.teacher_checksum_after}};
      write_json(dir / "distill.report.json", report);
      m.add(dir / "distill.report.json");
      m.write(dir);
      ctx.out << report.dump() << '\n';
      return kExitOk;
    };
  });

  // finetune ---------------------------------------------------------------
  Common ft_c;
  std::string ft_student, ft_data, ft_test;
  bool ft_lp = false;
  auto* ft_cmd = app.add_subcommand("finetune", "Final fine-tune of a distilled student on original data");
  add_common(ft_cmd, ft_c);
  ft_cmd->add_option("--student", ft_student)->required()->check(CLI::ExistingFile);
  ft_cmd->add_option("--data", ft_data)->required()->check(CLI::ExistingDirectory);
  ft_cmd->add_option("--test", ft_test)->check(CLI::ExistingDirectory);
  ft_cmd->add_flag("--lp-then-ft", ft_lp, "Linear probe before the full fine-tune");
  ft_cmd->callback([&] {
    action = [&] {
      nlohmann::json flags = nlohmann::json::object();
      if (ft_lp) flags["distill"]["lp_then_ft"] = true;
      auto r = resolve(ft_c, flags);
      const auto& cfg = r.config;
      SeededRng rng(cfg.seeds.master, "finetune");
      auto result = distill::final_finetune(load_checkpoint(ft_student), load_dataset(ft_data), cfg.distill.finetune,
                                            rng, {cfg.distill.lp_then_ft, ft_c.jobs, cfg.irf.val_fraction});
      nlohmann::json report{{"grid", irf::to_json(result.grid)},
                            {"val_top1", result.grid.winner_trial().val_metric}};
      if (!ft_test.empty())
        report["test_top1"] = top1(TaskModel::from_checkpoint(result.checkpoint), load_dataset(ft_test), cfg.metrics.resize);
      const fs::path dir = cfg.output_dir;
      RunManifest m("finetune", r.layers, cfg);
      save_stage(result.checkpoint, cfg, dir / "finetune.ckpt", m);
      write_json(dir / "finetune.report.json", report);
      m.add(dir / "finetune.report.json");
      m.write(dir);
      ctx.out << report.dump() << '\n';
      return kExitOk;
    };
  });

  // ota --------------------------------------------------------------------
  Common ota_c;
  std::string ota_order = "both";
  bool ota_skip_baseline = false;
  auto* ota_cmd = app.add_subcommand("ota", "Full pipeline: prime, then IRF and DIGG distillation in either order");
  add_common(ota_cmd, ota_c);
  ota_cmd->add_option("--order", ota_order, "irf_then_digg, digg_then_irf or both")
      ->check(CLI::IsMember({"irf_then_digg", "digg_then_irf", "both"}));
  ota_cmd->add_flag("--skip-baseline", ota_skip_baseline, "Do not run the fine-tune baseline row");
  ota_cmd->callback([&] {
    action = [&] {
      auto r = resolve(ota_c);
      const auto& cfg = r.config;
      const fs::path root = cfg.output_dir;
      auto data = load_run_datasets(cfg);
      auto prime = prime_all(cfg, data.upstream, root);
      RunManifest m("ota", r.layers, cfg);
      for (auto name : {"vq.ckpt", "lt.ckpt", "backbone.ckpt"}) m.add(prime.dir / name);
      m.add_note("prime_reused", prime.reused);

      std::vector<distill::OtaOrder> orders;
      if (ota_order != "digg_then_irf") orders.push_back(distill::OtaOrder::irf_then_digg);
      if (ota_order != "irf_then_digg") orders.push_back(distill::OtaOrder::digg_then_irf);

      distill::OtaInputs inputs{prime.backbone, prime.vq, prime.lt,
                                data.downstream, data.test, prime.student_backbone, cfg.data.name};
      std::vector<nlohmann::json> reports;
      const auto key_base = nlohmann::json{{"config", to_json(cfg)}, {"prime", prime.dir.filename().string()}};
      for (auto order : orders) {
        auto opts = ota_options(cfg, ota_c.jobs);
        auto key = key_base;
        key["order"] = std::string(distill::to_string(order));
        const auto dir = stage_dir(root, "ota_" + std::string(distill::to_string(order)), key);
        opts.output_dir = dir;
        opts.irf.output_dir = dir / "irf";
        SeededRng rng(cfg.seeds.master, "ota/" + std::string(distill::to_string(order)));
        auto result = distill::run_ota(order, inputs, opts, rng);
        reports.push_back(result.report);
        m.add(dir / "final.ckpt");
        m.add(dir / "ota.report.json");
      }
      if (!ota_skip_baseline) {
        SeededRng rng(cfg.seeds.master, "baseline/finetune");
        irf::StageOptions opts{cfg.irf.val_fraction, false, ota_c.jobs};
        auto result = irf::finetune(prime.backbone, data.downstream, cfg.irf.baseline, rng, opts);
        const double acc = data.test ? top1(TaskModel::from_checkpoint(result.checkpoint), *data.test, cfg.metrics.resize)
                                     : result.grid.winner_trial().val_metric;
        auto report = irf::baseline_report("finetune_baseline", cfg.data.name, acc, result);
        const auto dir = stage_dir(root, "baseline", key_base);
        write_json(dir / "baseline.report.json", report);
        m.add(dir / "baseline.report.json");
        reports.push_back(report);
      }
      const auto table = distill::comparison_tsv(reports);
      std::ofstream(root / "comparison.tsv", std::ios::binary) << table;
      write_json(root / "ota_summary.json", reports);
      m.add(root / "comparison.tsv");
      m.add(root / "ota_summary.json");
      m.write(root);
      ctx.out << table;
      return kExitOk;
    };
  });

  // fdscore ----------------------------------------------------------------
  std::string fd_a, fd_b, fd_model, fd_a_data, fd_b_data, fd_json, fd_chart;
  std::int64_t fd_resize = 32;
  auto* fd_cmd = app.add_subcommand("fdscore", "Frechet distance between two feature sets");
  fd_cmd->add_option("--a", fd_a, "Feature file")->check(CLI::ExistingFile);
  fd_cmd->add_option("--b", fd_b, "Feature file")->check(CLI::ExistingFile);
  fd_cmd->add_option("--model", fd_model, "Extractor checkpoint (with --a-data/--b-data)")->check(CLI::ExistingFile);
  fd_cmd->add_option("--a-data", fd_a_data)->check(CLI::ExistingDirectory);
  fd_cmd->add_option("--b-data", fd_b_data)->check(CLI::ExistingDirectory);
  fd_cmd->add_option("--resize", fd_resize);
  fd_cmd->add_option("--json", fd_json, "Write the result here");
  fd_cmd->add_option("--chart", fd_chart, "Write a bar chart PNG here");
  fd_cmd->callback([&] {
    action = [&] {
      auto bag = [&](const std::string& file, const std::string& dir, const char* which) {
        if (!file.empty()) return metrics::load_features(file);
        if (dir.empty() || fd_model.empty())
          throw CLI::ValidationError(std::string("--") + which, "give a feature file or --model with a data directory");
        auto model = TaskModel::from_checkpoint(load_checkpoint(fd_model));
        return metrics::extract_features(model, load_dataset(dir), fd_resize, fs::path(fd_model).filename().string());
      };
      auto a = bag(fd_a, fd_a_data, "a");
      auto b = bag(fd_b, fd_b_data, "b");
      auto result = metrics::fd_score(a, b);
      auto j = metrics::to_json(result);
      j["extractor_a"] = a.extractor_id;
      j["extractor_b"] = b.extractor_id;
      j["a"] = fd_a.empty() ? fd_a_data : fd_a;
      j["b"] = fd_b.empty() ? fd_b_data : fd_b;
      if (!fd_json.empty()) write_json(fd_json, j);
      if (!fd_chart.empty()) plot::write_bar_chart(fd_chart, {{"fd", result.value}});
      ctx.out.precision(17);
      ctx.out << result.value << '\n';
      return kExitOk;
    };
  });

  // eval -------------------------------------------------------------------
  std::string ev_model, ev_data, ev_features;
  std::int64_t ev_resize = 32;
  auto* ev_cmd = app.add_subcommand("eval", "Top-1 accuracy of a task checkpoint, optionally dumping features");
  ev_cmd->add_option("--model", ev_model)->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);
  ev_cmd->add_option("--resize", ev_resize);
  ev_cmd->add_option("--features-out", ev_features, "Write pooled backbone features here");
  ev_cmd->callback([&] {
    action = [&] {
      auto model = TaskModel::from_checkpoint(load_checkpoint(ev_model));
      auto data = load_dataset(ev_data);
      nlohmann::json j{{"records", data.size()}};
      if (!ev_features.empty()) {
        auto bag = metrics::extract_features(model, data, ev_resize, fs::path(ev_model).filename().string());
        metrics::save_features(bag, ev_features);
        j["features"] = ev_features;
      }
      if (data.labeled()) j["top1"] = metrics::top1_accuracy(model, data, ev_resize);
      ctx.out << j.dump() << '\n';
      return kExitOk;
    };
  });

  // report -----------------------------------------------------------------
  std::string rep_run;
  auto* rep_cmd = app.add_subcommand("report", "Rebuild tables and figures from stored reports");
  rep_cmd->add_option("--run", rep_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  rep_cmd->callback([&] {
    action = [&] {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(rep_run))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      std::vector<nlohmann::json> rows;
      std::vector<plot::Bar> bars;
      for (const auto& f : files) {
        const auto name = f.filename().string();
        if (name == "ota.report.json" || name == "baseline.report.json") {
          auto j = read_json(f);
          if (j.contains("top1") && j.contains("dataset")) rows.push_back(std::move(j));
        } else if (name.rfind("fd", 0) == 0 && f.extension() == ".json") {
          auto j = read_json(f);
          if (j.contains("value")) bars.push_back({f.stem().string(), j.at("value").get<double>()});
        }
      }
      if (rows.empty() && bars.empty()) throw LoadError("no reports found under " + rep_run);
      const fs::path dir = rep_run;
      if (!rows.empty()) {
        const auto table = distill::comparison_tsv(rows);
        std::ofstream(dir / "comparison.tsv", std::ios::binary) << table;
        ctx.out << table;
      }
      if (!bars.empty()) {
        plot::write_bar_chart(dir / "fd_scores.png", bars);
        for (const auto& b : bars) ctx.out << b.label << '\t' << b.value << '\n';
      }
      return kExitOk;
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    if (auto subs = app.get_subcommands(); !subs.empty())
      err << subs.front()->help();
    else
      err << app.help();
    return kExitUsage;
  }
  if (!action) return kExitUsage;
  nn::configure_determinism(1);
  try {
    return action();
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const StageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace ota::cli

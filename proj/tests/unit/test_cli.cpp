// Copyright (c) 2026, OTA contributors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "ota/cli/app.hpp"
#include "ota/cli/pipeline.hpp"
#include "ota/cli/run_config.hpp"
#include "ota/digest.hpp"
#include "ota/error.hpp"
#include "ota/metrics.hpp"

namespace ota::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::map<std::string, std::string> tree(const fs::path& dir, bool skip_manifest_json) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    if (skip_manifest_json && e.path().filename() == "manifest.json") continue;
    files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  }
  return files;
}

Outcome synth(const fs::path& out, const std::string& domain = "b", int count = 12) {
  return call({"synth", "--domain", domain, "--count", std::to_string(count), "--classes", "2", "--size", "16",
               "--seed", "5", "--out", out.string()});
}

TEST(Dispatch, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}).code, kExitUsage);
  auto unknown = call({"teleport"});
  EXPECT_EQ(unknown.code, kExitUsage);
  EXPECT_NE(unknown.err.find("usage error"), std::string::npos);
  EXPECT_EQ(call({"fdscore", "--bogus", "1"}).code, kExitUsage);
  EXPECT_EQ(call({"assemble"}).code, kExitUsage);
  EXPECT_EQ(call({"ota", "--order", "sideways"}).code, kExitUsage);
  EXPECT_EQ(call({"--help"}).code, kExitOk);
}

TEST(Dispatch, EverySubcommandListed) {
  auto help = call({"--help"}).out;
  for (auto name : {"prime", "assemble", "deliver", "calibrate", "irf", "baseline", "digg", "distill", "finetune",
                    "ota", "fdscore", "eval", "report"})
    EXPECT_NE(help.find(name), std::string::npos) << name;
}

TEST(Dispatch, RuntimeFailureExitsOneWithDiagnostic) {
  testing::TempDir dir;
  fs::create_directories(dir / "empty");
  auto r = call({"report", "--run", (dir / "empty").string()});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("no reports"), std::string::npos);
}

TEST(FdScoreCommand, MatchesLibrary) {
  testing::TempDir dir;
  SeededRng rng(1, "features");
  Eigen::MatrixXd a(20, 3), b(25, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal() + 0.5;
  metrics::FeatureBag fa{a, "x"}, fb{b, "x"};
  metrics::save_features(fa, dir / "up.features");
  metrics::save_features(fb, dir / "down.features");
  auto r = call({"fdscore", "--a", (dir / "up.features").string(), "--b", (dir / "down.features").string(), "--json",
                 (dir / "fd.json").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const double expected = metrics::fd_score(metrics::load_features(dir / "up.features"),
                                            metrics::load_features(dir / "down.features"))
                              .value;
  EXPECT_EQ(std::stod(r.out), expected);
  auto j = nlohmann::json::parse(slurp(dir / "fd.json"));
  EXPECT_EQ(j.at("value").get<double>(), expected);
  EXPECT_EQ(j.at("extractor_a"), "x");
}

TEST(FdScoreCommand, NeedsAnInput) {
  testing::TempDir dir;
  metrics::save_features({Eigen::MatrixXd::Ones(3, 2), "x"}, dir / "a.features");
  EXPECT_EQ(call({"fdscore", "--a", (dir / "a.features").string()}).code, kExitUsage);
}

TEST(SynthCommand, DeterministicAndLoadable) {
  testing::TempDir dir;
  ASSERT_EQ(synth(dir / "one").code, kExitOk);
  ASSERT_EQ(synth(dir / "two").code, kExitOk);
  EXPECT_EQ(tree(dir / "one", false), tree(dir / "two", false));
  auto d = load_dataset(dir / "one");
  EXPECT_EQ(d.size(), 12u);
  EXPECT_EQ(d.num_classes(), 2);
  EXPECT_EQ(d.provenance(), Provenance::original);
}

class AssembleCommand : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(synth(dir_ / "data").code, kExitOk);
    SeededRng rng(2, "vq");
    tokenizer_ = vq::VqTokenizer::initialize(testing::tiny_vq(), rng);
    CheckpointMeta meta;
    meta.stage_name = "stage1_vq";
    save_checkpoint(tokenizer_->to_checkpoint(meta), dir_ / "vq.ckpt");
  }
  Outcome assemble(const std::string& sub) {
    return call({"assemble", "--vq", (dir_ / "vq.ckpt").string(), "--data", (dir_ / "data").string(), "--out",
                 (dir_ / sub).string()});
  }
  testing::TempDir dir_;
  std::optional<vq::VqTokenizer> tokenizer_;
};

TEST_F(AssembleCommand, TwiceIsByteIdentical) {
  ASSERT_EQ(assemble("r1").code, kExitOk);
  ASSERT_EQ(assemble("r2").code, kExitOk);
  const auto first = tree(dir_ / "r1", true);
  EXPECT_EQ(first, tree(dir_ / "r2", true));
  EXPECT_TRUE(first.count("manifest.tsv"));
  auto m1 = nlohmann::json::parse(slurp(dir_ / "r1" / "manifest.json"));
  auto m2 = nlohmann::json::parse(slurp(dir_ / "r2" / "manifest.json"));
  EXPECT_EQ(m1.at("artifacts"), m2.at("artifacts"));
  EXPECT_EQ(m1.at("command"), "assemble");
}

TEST_F(AssembleCommand, ThinWrapperOverLibrary) {
  ASSERT_EQ(assemble("cli").code, kExitOk);
  auto direct = vq::rerepresent(load_dataset(dir_ / "data"), *tokenizer_);
  save_dataset(direct, dir_ / "lib");
  EXPECT_EQ(tree(dir_ / "cli", true), tree(dir_ / "lib", true));
  EXPECT_EQ(load_dataset(dir_ / "cli").provenance(), Provenance::re_represented);
}

TEST(RunConfigResolution, FlagsOverFileOverDefaults) {
  testing::TempDir dir;
  write_text(dir / "run.json", R"({"irf": {"stage4": {"steps": 30}}, "vq": {"train": {"steps": 7}}})");
  nlohmann::json flags;
  set_dotted(flags, "irf.stage4.steps", "50");
  auto r = resolve_config(dir / "run.json", flags);
  const auto defaults = default_run_config();
  EXPECT_EQ(r.config.irf.stage4.steps, 50);
  EXPECT_EQ(r.config.vq.train.steps, 7);
  EXPECT_EQ(r.config.irf.stage3.steps, defaults.irf.stage3.steps);
  EXPECT_EQ(r.layers.at("precedence"), nlohmann::json({"flags", "file", "defaults"}));
  EXPECT_EQ(r.layers.at("file").at("values").at("vq").at("train").at("steps"), 7);
  EXPECT_EQ(r.layers.at("flags").at("irf").at("stage4").at("steps"), 50);
  EXPECT_EQ(r.layers.at("defaults"), to_json(defaults));
}

TEST(RunConfigResolution, JsonRoundTripOfDefaults) {
  const auto d = default_run_config();
  EXPECT_EQ(to_json(run_config_from_json(to_json(d), default_run_config())), to_json(d));
}

TEST(RunConfigResolution, UnknownKeysRejected) {
  EXPECT_THROW(run_config_from_json({{"irf", {{"stage5", 1}}}}, default_run_config()), ValidationError);
  EXPECT_THROW(run_config_from_json({{"colour", 1}}, default_run_config()), ValidationError);
  testing::TempDir dir;
  write_text(dir / "bad.json", R"({"digg": {"target": 10}})");
  ASSERT_EQ(synth(dir / "data").code, kExitOk);
  auto r = call({"assemble", "--config", (dir / "bad.json").string(), "--vq", (dir / "bad.json").string(), "--data",
                 (dir / "data").string()});
  EXPECT_NE(r.code, kExitOk);
  EXPECT_NE(r.err.find("target"), std::string::npos);
}

TEST(RunConfigResolution, SetDottedParsesJsonOrString) {
  nlohmann::json doc;
  set_dotted(doc, "a.b", "3");
  set_dotted(doc, "a.c", "[0.1, 0.2]");
  set_dotted(doc, "d", "linear_probe");
  EXPECT_EQ(doc.at("a").at("b"), 3);
  EXPECT_EQ(doc.at("a").at("c").size(), 2u);
  EXPECT_EQ(doc.at("d"), "linear_probe");
  testing::TempDir dir;
  ASSERT_EQ(synth(dir / "data").code, kExitOk);
  write_text(dir / "vq.ckpt", "");
  EXPECT_EQ(call({"assemble", "--set", "novalue", "--vq", (dir / "vq.ckpt").string(), "--data", (dir / "data").string()})
                .code,
            kExitUsage);
}

TEST(StageDir, ContentAddressed) {
  const nlohmann::json key{{"a", 1}};
  auto p = stage_dir("root", "prime", key);
  EXPECT_EQ(p.parent_path(), fs::path("root"));
  const auto name = p.filename().string();
  ASSERT_EQ(name.size(), std::string("prime-").size() + 12);
  EXPECT_EQ(name.substr(0, 6), "prime-");
  EXPECT_EQ(name.substr(6), sha256_hex(key.dump()).substr(0, 12));
  EXPECT_NE(stage_dir("root", "prime", {{"a", 2}}), p);
}

class DeliverCommand : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(synth(dir_ / "data").code, kExitOk);
    SeededRng rng(3, "backbone");
    auto model = TaskModel::initialize(testing::tiny_backbone(), 4, rng);
    CheckpointMeta meta;
    meta.stage_name = "pretrain";
    save_checkpoint(model.to_checkpoint(meta), dir_ / "backbone.ckpt");
    write_text(dir_ / "run.json",
               R"({"irf": {"stage3": {"steps": 3, "batch_size": 4, "lr_grid": [0.01],
                   "input": {"resize": 16, "crop": 16}}}})");
  }
  Outcome deliver(const std::string& sub, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"deliver",      "--config", (dir_ / "run.json").string(), "--backbone",
                                  (dir_ / "backbone.ckpt").string(), "--data", (dir_ / "data").string(),
                                  "--out",         (dir_ / sub).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return call(args);
  }
  testing::TempDir dir_;
};

TEST_F(DeliverCommand, OriginalDataNeedsTheAblationFlag) {
  auto refused = deliver("default");
  EXPECT_EQ(refused.code, kExitFailure);
  EXPECT_NE(refused.err.find("expected re_represented"), std::string::npos) << refused.err;

  auto r = deliver("ablation", {"--delivering-data", "original"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto report = nlohmann::json::parse(slurp(dir_ / "ablation" / "stage3_deliver.report.json"));
  EXPECT_EQ(report.dump().find("\"delivering_data\":\"original\"") != std::string::npos, true) << report.dump();
  auto ckpt = load_checkpoint(dir_ / "ablation" / "stage3_deliver.ckpt");
  auto before = load_checkpoint(dir_ / "backbone.ckpt");
  for (const auto& [name, t] : before.params)
    if (name.rfind("backbone.", 0) == 0) EXPECT_TRUE(testing::tensors_bit_equal(ckpt.params.at(name), t)) << name;
  auto manifest = nlohmann::json::parse(slurp(dir_ / "ablation" / "manifest.json"));
  EXPECT_EQ(manifest.at("config").at("irf").at("delivering"), "original");
  EXPECT_EQ(ckpt.meta.extra.at("run_config_digest"), manifest.at("config_digest"));
}

TEST_F(DeliverCommand, ReRepresentedDataAccepted) {
  SeededRng rng(2, "vq");
  auto tokenizer = vq::VqTokenizer::initialize(testing::tiny_vq(), rng);
  save_dataset(vq::rerepresent(load_dataset(dir_ / "data"), tokenizer), dir_ / "rerep");
  auto r = call({"deliver", "--config", (dir_ / "run.json").string(), "--backbone", (dir_ / "backbone.ckpt").string(),
                 "--data", (dir_ / "rerep").string(), "--out", (dir_ / "run").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "stage3_deliver.ckpt"));
}

TEST(ReportCommand, RebuildsTableFromStoredReports) {
  testing::TempDir dir;
  fs::create_directories(dir / "a");
  write_text(dir / "a" / "ota.report.json",
             R"({"method": "irf_then_digg", "order": "irf_then_digg", "dataset": "shapes_b", "top1": 0.5})");
  write_text(dir / "fd_up_down.json", R"({"value": 2.5})");
  auto r = call({"report", "--run", dir.path().string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("50.00"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "comparison.tsv"));
  EXPECT_TRUE(fs::exists(dir / "fd_scores.png"));
}

}  // namespace
}  // namespace ota::cli

// SPDX-License-Identifier: Apache-2.0
// Drives the memeblip binary end to end on small synthetic data.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "memeblip/dataio.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + MEMEBLIP_CLI_PATH + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  Result r;
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json run_json(const std::string& args, const std::string& env = "") {
  const Result r = run("--json " + args, env);
  EXPECT_EQ(r.code, 0) << args << "\n" << r.out;
  return json::parse(r.out);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

std::map<std::string, std::string> param_digests(const json& inspect) {
  std::map<std::string, std::string> out;
  for (const auto& p : inspect["params"]) out[p["name"]] = p["digest"];
  return out;
}

const std::string kHead = " --img_dim 24 --txt_dim 12 --shared_dim 16 --batch_size 32 --lr 1e-3 ";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("memeblip_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const Result r = run("synth --n 240 --img_dim 24 --txt_dim 12 --separation 4 --seed 3"
                         " --split_seed 1 --out " + path("data.mbe2"));
    ASSERT_EQ(r.code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static std::string data() { return path("data.mbe2"); }

  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, SynthWritesRequestedCountAndIsReproducible) {
  const auto a = run_json("synth --n 50 --img_dim 6 --txt_dim 4 --seed 9 --out " + path("a.mbe2"));
  const auto b = run_json("synth --n 50 --img_dim 6 --txt_dim 4 --seed 9 --out " + path("b.mbe2"));
  EXPECT_EQ(a["count"], 50);
  EXPECT_EQ(slurp(path("a.mbe2")), slurp(path("b.mbe2")));
  EXPECT_TRUE(fs::exists(path("a.mbe2.manifest.json")));
}

TEST_F(Cli, InvalidSettingIsUsageError) {
  EXPECT_EQ(run("synth --noise 1.5 --out " + path("x.mbe2")).code, 2);
  EXPECT_EQ(run("train --data " + data() + " --out_dir " + path("x") + " --epochs zero").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, UnknownConfigFileKeyIsUsageError) {
  std::ofstream(path("bad.cfg")) << "not_a_key = 1\n";
  EXPECT_EQ(run("--config " + path("bad.cfg") + " synth --out " + path("x.mbe2")).code, 2);
}

TEST_F(Cli, TrainWritesOneLogRowPerEpoch) {
  const auto doc = run_json("train --data " + data() + " --out_dir " + path("t3") + kHead +
                            " --epochs 3 --warmup_epochs 1");
  EXPECT_EQ(doc["epochs"].size(), 3u);
  EXPECT_EQ(line_count(slurp(path("t3/epochs.csv"))), 4u);
  for (const char* f : {"best.mbck", "last.mbck", "grad_std.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(path("t3/") + f)) << f;
  }
  EXPECT_FALSE(doc["test"].is_null());
}

TEST_F(Cli, ZeroLearningRateLeavesInitialParameters) {
  const std::string common = "train --data " + data() + kHead + " --epochs 3 --warmup_epochs 1";
  run_json(common + " --out_dir " + path("init") + " --stop_after_epoch 0");
  run_json(common + " --out_dir " + path("lr0") + " --lr 0");
  const auto init = run_json("inspect " + path("init/last.mbck"));
  const auto trained = run_json("inspect " + path("lr0/last.mbck"));
  EXPECT_EQ(trained["epoch"], 3);
  EXPECT_EQ(param_digests(init), param_digests(trained));
}

TEST_F(Cli, MinimalAblationStoresOnlyClassifier) {
  run_json("train --data " + data() + " --out_dir " + path("min") + kHead +
           " --epochs 2 --warmup_epochs 1 --ablation minimal");
  const auto doc = run_json("inspect --validate " + path("min/best.mbck"));
  EXPECT_EQ(doc["head"]["ablation"], "minimal");
  const auto names = param_digests(doc);
  ASSERT_EQ(names.size(), 2u);
  EXPECT_TRUE(names.count("classifier.W"));
  EXPECT_TRUE(names.count("classifier.b"));
}

TEST_F(Cli, OverfitRunScoresPerfectlyOnItsTrainingSplit) {
  run_json("synth --n 40 --img_dim 8 --txt_dim 6 --separation 8 --seed 2 --out " + path("tiny.mbe2"));
  run_json("split --data " + path("tiny.mbe2") + " --out " + path("tiny_split.mbe2") +
           " --train_frac 0.8 --val_frac 0.1 --test_frac 0.1 --seed 1");
  run_json("train --data " + path("tiny_split.mbe2") + " --out_dir " + path("tiny") +
           " --img_dim 8 --txt_dim 6 --shared_dim 8 --epochs 40 --warmup_epochs 1"
           " --batch_size 8 --lr 1e-3 --dropout_proj 0 --dropout_adapter 0 --dropout_preout 0"
           " --dropout_cls 0");
  const auto doc = run_json("eval --checkpoint " + path("tiny/last.mbck") + " --data " +
                            path("tiny_split.mbe2") + " --split train");
  EXPECT_EQ(doc["n"], 32);
  EXPECT_DOUBLE_EQ(doc["accuracy"].get<double>(), 1.0);
}

TEST_F(Cli, AblateWritesFiveScenarioRows) {
  const auto doc = run_json("ablate --data " + data() + " --out_dir " + path("study") + kHead +
                            " --epochs 2 --warmup_epochs 1 --seeds 1,2");
  EXPECT_EQ(doc["scenarios"].size(), 5u);
  EXPECT_EQ(line_count(slurp(path("study/study.csv"))), 6u);
  EXPECT_TRUE(fs::exists(path("study/study.txt")));
}

TEST_F(Cli, DiagnoseNamesInjectedParameter) {
  run_json("train --data " + data() + " --out_dir " + path("spike") + kHead +
           " --epochs 3 --warmup_epochs 1 --inject_step 10 --inject_param adapter_img.W1"
           " --inject_factor 1000");
  const auto doc = run_json("diagnose --log " + path("spike/grad_std.csv"));
  ASSERT_EQ(doc["flagged"].size(), 1u);
  EXPECT_EQ(doc["flagged"][0], "adapter_img.W1");
  EXPECT_EQ(run("train --data " + data() + " --out_dir " + path("x") + kHead +
                " --inject_step 1 --inject_param nope").code,
            2);
}

TEST_F(Cli, InspectValidatesFixtures) {
  const std::string fx = MEMEBLIP_FIXTURE_DIR;
  const auto doc = run_json("inspect --validate " + fx + "/small.mbe2");
  EXPECT_EQ(doc["kind"], "dataset");
  EXPECT_EQ(doc["count"], 3);
  for (const char* bad : {"truncated.mbe2", "bad_magic.mbe2", "bad_version.mbe2", "narrow_text.mbe2"}) {
    EXPECT_EQ(run("inspect --validate " + fx + "/" + bad).code, 3) << bad;
  }
}

TEST_F(Cli, CorruptCheckpointIsDataError) {
  run_json("train --data " + data() + " --out_dir " + path("c") + kHead + " --epochs 2 --warmup_epochs 1");
  std::string bytes = slurp(path("c/last.mbck"));
  bytes.pop_back();
  std::ofstream(path("cut.mbck"), std::ios::binary) << bytes;
  const Result r = run("--json inspect --validate " + path("cut.mbck"));
  EXPECT_EQ(r.code, 3);
  const auto doc = json::parse(r.out);
  EXPECT_FALSE(doc["ok"].get<bool>());
  EXPECT_EQ(doc["error"]["exit_code"], 3);
}

TEST_F(Cli, ImportExportRoundTrip) {
  const std::string fx = MEMEBLIP_FIXTURE_DIR;
  run_json("import --jsonl " + fx + "/small.jsonl --out " + path("imp.mbe2"));
  EXPECT_EQ(slurp(path("imp.mbe2")), slurp(fx + "/small.mbe2"));
  run_json("export --data " + path("imp.mbe2") + " --out " + path("exp.jsonl"));
  run_json("import --jsonl " + path("exp.jsonl") + " --out " + path("imp2.mbe2"));
  EXPECT_EQ(slurp(path("imp2.mbe2")), slurp(fx + "/small.mbe2"));
}

TEST_F(Cli, PrecedenceIsFileThenEnvironmentThenFlag) {
  std::ofstream(path("p.cfg")) << "n = 11\nimg_dim = 4\ntxt_dim = 3\nseparation = 2\n";
  const std::string base = "--config " + path("p.cfg") + " synth --out " + path("p.mbe2");
  EXPECT_EQ(run_json(base)["count"], 11);
  EXPECT_EQ(run_json(base, "MEMEBLIP_N=12")["count"], 12);
  EXPECT_EQ(run_json(base + " --n 13", "MEMEBLIP_N=12")["count"], 13);
  EXPECT_EQ(run_json(base + " --n 13")["count"], 13);
}

TEST_F(Cli, ConfigFileMayCarryKeysForOtherCommands) {
  std::ofstream(path("shared.cfg")) << "n = 7\nepochs = 3\nimg_dim = 4\ntxt_dim = 3\n";
  EXPECT_EQ(run_json("--config " + path("shared.cfg") + " synth --out " + path("s.mbe2"))["count"], 7);
}

TEST_F(Cli, ManifestReplayReproducesCheckpoint) {
  run_json("train --data " + data() + " --out_dir " + path("orig") + kHead +
           " --epochs 3 --warmup_epochs 1 --seed 5");
  const auto manifest = json::parse(slurp(path("orig/manifest.json")));
  EXPECT_EQ(manifest["tool"], "memeblip");
  EXPECT_EQ(manifest["command"], "train");
  ASSERT_EQ(manifest["inputs"].size(), 1u);
  EXPECT_EQ(manifest["inputs"][0]["digest"], memeblip::digest_hex(slurp(data())));
  std::ofstream(path("replay.cfg")) << manifest["config_text"].get<std::string>();
  run_json("--config " + path("replay.cfg") + " train --out_dir " + path("replay"));
  EXPECT_EQ(slurp(path("orig/best.mbck")), slurp(path("replay/best.mbck")));
  EXPECT_EQ(slurp(path("orig/last.mbck")), slurp(path("replay/last.mbck")));
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  const std::string common = "train --data " + data() + kHead + " --epochs 4 --warmup_epochs 1 --seed 2";
  run_json(common + " --out_dir " + path("full"));
  run_json(common + " --out_dir " + path("half") + " --stop_after_epoch 2");
  run_json(common + " --out_dir " + path("rest") + " --resume " + path("half/last.mbck") +
           " --resume_best " + path("half/best.mbck"));
  EXPECT_EQ(slurp(path("full/last.mbck")), slurp(path("rest/last.mbck")));
  EXPECT_EQ(slurp(path("full/best.mbck")), slurp(path("rest/best.mbck")));
  EXPECT_EQ(run(common + " --out_dir " + path("x") + " --shared_dim 8 --resume " +
                path("half/last.mbck")).code,
            2);
}

}  // namespace

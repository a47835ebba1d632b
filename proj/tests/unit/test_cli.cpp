// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>
#include <stdlib.h>
#include <sys/wait.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "app/commands.hpp"
#include "app/config.hpp"
#include "pdqat/checkpoint.hpp"
#include "test_util.hpp"

namespace pdqat::app {
namespace {

using pdqat::testing::TempDir;
using pdqat::testing::read_file;
using pdqat::testing::write_file;

const std::filesystem::path kFixtures = PDQAT_FIXTURE_DIR;

std::string blobs_config(const std::filesystem::path& out, std::size_t epochs = 3,
                         const std::string& extra_train = "") {
  return "model:\n"
         "  layers:\n"
         "    - {units: 8}\n"
         "    - {units: 8}\n"
         "    - {units: 2}\n"
         "quant:\n"
         "  bits: [2, 2, 0]\n"
         "train:\n"
         "  epochs: " + std::to_string(epochs) + "\n"
         "  batch_size: 32\n"
         "  lr: 0.01\n"
         "  early_stop: false\n"
         "  precision: f64\n" + extra_train +
         "data:\n"
         "  source: synthetic\n"
         "  kind: blobs\n"
         "  n_per_class: 60\n"
         "  test_n_per_class: 20\n"
         "  seed: 4\n"
         "output_dir: " + out.string() + "\n";
}

struct Captured {
  std::ostringstream out, err;
  Io io() { return {out, err}; }
};

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

std::string header_line(std::size_t constraints) {
  std::string s;
  for (const auto& h : metrics_header(constraints)) s += (s.empty() ? "" : ",") + h;
  return s;
}

RankOptions rank_options(const std::filesystem::path& checkpoint) {
  RankOptions o;
  o.checkpoint = checkpoint;
  return o;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(PDQAT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// ---------------------------------------------------------------- config

TEST(Config, MinimalDefaults) {
  const auto cfg = parse_config(blobs_config("o"), ".");
  EXPECT_EQ(cfg.model.blocks.size(), 3u);
  EXPECT_EQ(cfg.model.blocks[0].activation, Activation::clip);
  EXPECT_EQ(cfg.model.blocks[2].activation, Activation::none);
  EXPECT_EQ(cfg.bits, (std::vector<int>{2, 2, 0}));
  EXPECT_EQ(cfg.precision, Precision::f64);
  EXPECT_EQ(cfg.train.epochs, 3u);
  EXPECT_EQ(cfg.data.test_n_per_class, 20u);
}

TEST(Config, UnknownKeyIsNamed) {
  std::string text = blobs_config("o");
  text.replace(text.find("  lr:"), 5, "  learning_rate:");
  try {
    parse_config(text, ".");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos) << e.what();
  }
}

TEST(Config, BitsMustMatchLayers) {
  std::string text = blobs_config("o");
  text.replace(text.find("[2, 2, 0]"), 9, "[2, 0]");
  EXPECT_THROW(parse_config(text, "."), ConfigError);
}

TEST(Config, RejectsBadValues) {
  for (const auto& [from, to] : std::vector<std::pair<std::string, std::string>>{
           {"[2, 2, 0]", "[2, 33, 0]"},
           {"lr: 0.01", "lr: fast"},
           {"kind: blobs", "kind: moons"},
           {"precision: f64", "precision: f16"},
           {"batch_size: 32", "batch_size: 0"}}) {
    std::string text = blobs_config("o");
    text.replace(text.find(from), from.size(), to);
    EXPECT_THROW(parse_config(text, "."), InputError) << to;
  }
  EXPECT_THROW(parse_config("model: [", "."), ConfigError);
  EXPECT_THROW(parse_config("quant: {bits: [0]}\n", "."), ConfigError);
}

TEST(Config, DataPathsResolveAgainstTheConfigDirectory) {
  const std::string text =
      "model: {layers: [{units: 4}]}\nquant: {bits: [0]}\n"
      "data: {source: idx, train_images: a.idx, train_labels: b.idx}\n";
  const auto cfg = parse_config(text, "/cfgdir");
  EXPECT_EQ(cfg.data.train_images, std::filesystem::path("/cfgdir/a.idx"));
}

TEST(Config, OutputDirEnvironmentOverride) {
  ::setenv("PDQAT_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir("here"), std::filesystem::path("/tmp/elsewhere"));
  ::unsetenv("PDQAT_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir("here"), std::filesystem::path("here"));
}

// ---------------------------------------------------------------- train

TEST(Train, MissingConfigExitsTwoAndNamesThePath) {
  Captured c;
  EXPECT_EQ(cmd_train({"/nonexistent/run.yaml"}, c.io()), kExitConfig);
  EXPECT_NE(c.err.str().find("/nonexistent/run.yaml"), std::string::npos) << c.err.str();
}

TEST(Train, ZeroEpochsWritesHeaderOnly) {
  TempDir dir;
  write_file(dir / "run.yaml", blobs_config(dir / "out", 0));
  Captured c;
  ASSERT_EQ(cmd_train({dir / "run.yaml"}, c.io()), kExitOk) << c.err.str();
  const std::string csv = read_file(dir / "out" / "metrics.csv");
  EXPECT_EQ(count_lines(csv), 1u);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), header_line(2));
}

TEST(Train, SmokeRunWritesArtifacts) {
  TempDir dir;
  write_file(dir / "run.yaml", blobs_config(dir / "out"));
  Captured c;
  ASSERT_EQ(cmd_train({dir / "run.yaml"}, c.io()), kExitOk) << c.err.str();
  EXPECT_EQ(count_lines(read_file(dir / "out" / "metrics.csv")), 4u);
  const auto ck = load_checkpoint<double>(dir / "out" / "checkpoint.pdqat");
  ASSERT_TRUE(ck.duals.has_value());
  EXPECT_EQ(ck.duals->trajectory.size(), 3u);
  EXPECT_EQ(ck.normalization.mean.size(), 2u);
  EXPECT_NE(c.out.str().find("lambda"), std::string::npos) << c.out.str();
}

TEST(Train, HeaderMatchesGoldenFile) {
  std::string golden = read_file(kFixtures / "metrics_header_3layer.golden");
  while (!golden.empty() && (golden.back() == '\n' || golden.back() == '\r')) golden.pop_back();
  EXPECT_EQ(header_line(2), golden);
}

TEST(Train, BaselineCheckpointCannotBeRanked) {
  TempDir dir;
  write_file(dir / "run.yaml", blobs_config(dir / "out", 1));
  Captured c;
  ASSERT_EQ(cmd_train({dir / "run.yaml", true}, c.io()), kExitOk) << c.err.str();
  const std::string csv = read_file(dir / "out" / "metrics.csv");
  EXPECT_NE(csv.find(",,"), std::string::npos);
  Captured r;
  EXPECT_EQ(cmd_rank(rank_options(dir / "out" / "checkpoint.pdqat"), r.io()), kExitConfig);
}

TEST(Train, OutputDirFromEnvironment) {
  TempDir dir;
  write_file(dir / "run.yaml", blobs_config(dir / "ignored", 1));
  ::setenv("PDQAT_OUTPUT_DIR", (dir / "env").c_str(), 1);
  Captured c;
  const int code = cmd_train({dir / "run.yaml"}, c.io());
  ::unsetenv("PDQAT_OUTPUT_DIR");
  ASSERT_EQ(code, kExitOk) << c.err.str();
  EXPECT_TRUE(std::filesystem::exists(dir / "env" / "metrics.csv"));
  EXPECT_FALSE(std::filesystem::exists(dir / "ignored"));
}

// ---------------------------------------------------------------- rank, mixed-eval, sweep

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    write_file(*dir_ / "run.yaml", blobs_config(*dir_ / "out"));
    Captured c;
    ASSERT_EQ(cmd_train({*dir_ / "run.yaml"}, c.io()), kExitOk) << c.err.str();
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::filesystem::path config() { return *dir_ / "run.yaml"; }
  static std::filesystem::path checkpoint() { return *dir_ / "out" / "checkpoint.pdqat"; }
  static std::filesystem::path out() { return *dir_ / "out"; }
  static TempDir* dir_;
};
TempDir* TrainedRun::dir_ = nullptr;

TEST_F(TrainedRun, RankWritesAllConstrainedLayers) {
  Captured c;
  RankOptions o = rank_options(checkpoint());
  ASSERT_EQ(cmd_rank(o, c.io()), kExitOk) << c.err.str();
  const std::string csv = read_file(out() / "rank.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "layer,lambda,rank");
  EXPECT_EQ(count_lines(csv), 3u);
  o.statistic = "median";
  EXPECT_EQ(cmd_rank(o, c.io()), kExitConfig);
}

TEST_F(TrainedRun, CorruptCheckpointExitsTwo) {
  TempDir dir;
  std::string bytes = read_file(checkpoint());
  bytes.replace(0, 5, "XXXXX");
  write_file(dir / "bad.pdqat", bytes);
  Captured c;
  EXPECT_EQ(cmd_rank(rank_options(dir / "bad.pdqat"), c.io()), kExitConfig);
  EXPECT_NE(c.err.str().find("magic"), std::string::npos) << c.err.str();
}

TEST_F(TrainedRun, MixedEvalExtremes) {
  TempDir dir;
  ::setenv("PDQAT_OUTPUT_DIR", dir.path().c_str(), 1);
  Captured c;
  MixedEvalOptions o;
  o.config = config();
  o.checkpoint = checkpoint();
  o.ks = {0, 2};
  const int code = cmd_mixed_eval(o, c.io());
  ::unsetenv("PDQAT_OUTPUT_DIR");
  ASSERT_EQ(code, kExitOk) << c.err.str();
  std::istringstream csv(read_file(dir / "mixed_eval.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "K,mode,accuracy,seed");
  std::map<std::string, std::string> acc;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string k, mode, a;
    std::getline(row, k, ',');
    std::getline(row, mode, ',');
    std::getline(row, a, ',');
    acc[k + mode] = a;
  }
  ASSERT_EQ(acc.size(), 4u);
  EXPECT_EQ(acc["0top"], acc["0bottom"]);
  EXPECT_EQ(acc["2top"], acc["2bottom"]);  // every constrained layer de-quantized either way

  o.ks = {3};
  EXPECT_EQ(cmd_mixed_eval(o, c.io()), kExitConfig);
  o.ks = {1};
  o.seeds = {1, 2};
  EXPECT_EQ(cmd_mixed_eval(o, c.io()), kExitConfig);
}

TEST_F(TrainedRun, SweepSingleValueAndDuplicates) {
  TempDir dir;
  ::setenv("PDQAT_OUTPUT_DIR", dir.path().c_str(), 1);
  Captured c;
  SweepOptions o;
  o.config = config();
  o.values = {0.3};
  const int ok = cmd_sweep(o, c.io());
  o.values = {0.3, 0.3};
  const int dup = cmd_sweep(o, c.io());
  o.values = {0.3};
  o.param = "eps_1";
  const int per_layer = cmd_sweep(o, c.io());
  ::unsetenv("PDQAT_OUTPUT_DIR");
  ASSERT_EQ(ok, kExitOk) << c.err.str();
  EXPECT_EQ(count_lines(read_file(dir / "sweep.csv")), 2u);
  EXPECT_EQ(dup, kExitConfig);
  EXPECT_EQ(per_layer, kExitConfig);
}

// ---------------------------------------------------------------- gradcheck

TEST(Gradcheck, PassesAndCatchesCorruption) {
  Captured ok;
  GradcheckCommandOptions o;
  o.points = 3;
  EXPECT_EQ(cmd_gradcheck(o, ok.io()), kExitOk) << ok.out.str() << ok.err.str();
  EXPECT_NE(ok.out.str().find("PASS"), std::string::npos);
  Captured bad;
  o.corrupt_backward = true;
  EXPECT_EQ(cmd_gradcheck(o, bad.io()), kExitCheckFailed);
  EXPECT_NE(bad.out.str().find("FAIL"), std::string::npos);
}

// ---------------------------------------------------------------- binary

TEST(Binary, ExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("train /nonexistent.yaml"), 2);
  EXPECT_EQ(run_cli("gradcheck --points 2"), 0);
  EXPECT_EQ(run_cli("gradcheck --points 2 --corrupt-backward"), 1);
  EXPECT_EQ(run_cli("sweep /nonexistent.yaml --values 0.1"), 2);
}

}  // namespace
}  // namespace pdqat::app

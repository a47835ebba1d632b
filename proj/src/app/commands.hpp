// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

// Subcommand entry points. Each returns a process exit code:
// 0 success, 1 check failed, 2 usage or configuration error,
// 3 numeric divergence.

namespace pdqat::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

struct Io {
  std::ostream& out;
  std::ostream& err;
};

struct TrainOptions {
  std::filesystem::path config;
  bool baseline = false;
};

struct RankOptions {
  std::filesystem::path checkpoint;
  std::string statistic = "final";
  std::optional<std::filesystem::path> output_dir;
};

struct MixedEvalOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::size_t> ks{0};
  std::string mode = "both";   // top, bottom or both
  std::vector<std::uint64_t> seeds;  // empty: the config's seed
  std::string split = "test";  // test or train
};

struct SweepOptions {
  std::filesystem::path config;
  std::string param = "eps_out";
  std::vector<double> values;
  std::size_t jobs = 1;
};

struct GradcheckCommandOptions {
  std::optional<std::filesystem::path> config;
  std::size_t points = 20;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  /// Scales the analytic gradient by 1.5; exercises the failure path.
  bool corrupt_backward = false;
};

int cmd_train(const TrainOptions& opts, Io io);
int cmd_rank(const RankOptions& opts, Io io);
int cmd_mixed_eval(const MixedEvalOptions& opts, Io io);
int cmd_sweep(const SweepOptions& opts, Io io);
int cmd_gradcheck(const GradcheckCommandOptions& opts, Io io);

}  // namespace pdqat::app

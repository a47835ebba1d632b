// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include <iostream>

#include "CLI11.hpp"
#include "app/commands.hpp"

int main(int argc, char** argv) {
  using namespace pdqat::app;
  CLI::App app{"Primal-dual quantization-aware training"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("config", train.config, "YAML run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_flag("--baseline", train.baseline, "Straight-through-estimator baseline instead");

  RankOptions rank;
  auto* rank_cmd = app.add_subcommand("rank", "Rank layers by their trained multipliers");
  rank_cmd->add_option("checkpoint", rank.checkpoint, "Checkpoint written by train")->required();
  rank_cmd->add_option("--statistic", rank.statistic, "final or mean (over the dual trajectory)")
      ->check(CLI::IsMember({"final", "mean"}));
  rank_cmd->add_option("--output-dir", rank.output_dir, "Directory for rank.csv");

  MixedEvalOptions mixed;
  auto* mixed_cmd = app.add_subcommand("mixed-eval", "Accuracy with K layers kept at full precision");
  mixed_cmd->add_option("--config", mixed.config, "YAML run config")->required();
  mixed_cmd->add_option("--checkpoint", mixed.checkpoint, "Evaluate this checkpoint instead of training");
  mixed_cmd->add_option("--k", mixed.ks, "Comma-separated K values")->delimiter(',');
  mixed_cmd->add_option("--mode", mixed.mode, "top, bottom or both")
      ->check(CLI::IsMember({"top", "bottom", "both"}));
  mixed_cmd->add_option("--seeds", mixed.seeds, "Comma-separated training seeds")->delimiter(',');
  mixed_cmd->add_option("--split", mixed.split, "test or train")->check(CLI::IsMember({"test", "train"}));

  SweepOptions sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train once per bound value");
  sweep_cmd->add_option("config", sweep.config, "YAML run config")->required();
  sweep_cmd->add_option("--param", sweep.param, "eps_out or eps_layer");
  sweep_cmd->add_option("--values", sweep.values, "Comma-separated bound values")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--jobs", sweep.jobs, "Concurrent training runs")->check(CLI::PositiveNumber);

  GradcheckCommandOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the Lagrangian gradient");
  grad_cmd->add_option("--config", grad.config, "YAML run config (model and bounds)");
  grad_cmd->add_option("--points", grad.points, "Number of random points");
  grad_cmd->add_option("--seed", grad.seed, "Sampling seed");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Pass threshold on the relative error");
  grad_cmd->add_flag("--corrupt-backward", grad.corrupt_backward, "Scale the analytic gradient by 1.5");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const Io io{std::cout, std::cerr};
  if (*train_cmd) return cmd_train(train, io);
  if (*rank_cmd) return cmd_rank(rank, io);
  if (*mixed_cmd) return cmd_mixed_eval(mixed, io);
  if (*sweep_cmd) return cmd_sweep(sweep, io);
  return cmd_gradcheck(grad, io);
}

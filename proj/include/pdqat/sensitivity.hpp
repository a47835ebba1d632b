// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdqat/data.hpp"
#include "pdqat/pdqat.hpp"
#include "pdqat/shadow_model.hpp"

namespace pdqat {

// ---------------------------------------------------------------- ranking

enum class RankStatistic { final_value, trajectory_mean };

RankStatistic rank_statistic_from_string(std::string_view s);

struct RankedLayer {
  std::size_t layer = 0;  // 1-based constraint id (= model layer id)
  double lambda = 0.0;
  std::size_t rank = 0;   // 1 = largest multiplier
};

using LayerRanking = std::vector<RankedLayer>;

/// Descending by lambda; ties go to the lower layer id.
LayerRanking rank_layers(std::span<const double> lambdas);
LayerRanking rank_layers(const DualState& duals,
                         RankStatistic statistic = RankStatistic::final_value);

// ---------------------------------------------------------------- mixed precision

enum class MixedMode { top, bottom };

std::string_view to_string(MixedMode m);
MixedMode mixed_mode_from_string(std::string_view s);

/// Keeps the first (top) or last (bottom) K ranked layers in high precision,
/// measures quantized accuracy on `data`, and restores the model's
/// quantization spec. Throws InputError unless 0 <= K <= L - 1.
template <std::floating_point Real>
double mixed_precision_eval(ShadowModel<Real>& model, const LayerRanking& ranking, std::size_t k,
                            MixedMode mode, const Dataset<Real>& data);

// ---------------------------------------------------------------- experiments

/// Everything needed to train one model from scratch.
template <std::floating_point Real>
struct Experiment {
  ModelSpec model;
  QuantSpec quant;
  std::uint64_t init_seed = 0;
  TrainRunConfig train;
  const Dataset<Real>* train_data = nullptr;
  const Dataset<Real>* test_data = nullptr;  // optional
};

struct RunOutcome {
  TrainReport report;
  /// Final mean training loss of the full-precision model, eval mode.
  double objective = 0.0;
  double test_acc = 0.0;  // quantized model; NaN without test data
  bool finished = true;   // false when training diverged
  std::string error;
};

template <std::floating_point Real>
RunOutcome run_experiment(const Experiment<Real>& exp);

/// Runs `exps` on up to `jobs` threads; results keep the input order.
template <std::floating_point Real>
std::vector<RunOutcome> run_experiments(std::span<const Experiment<Real>> exps, std::size_t jobs);

/// Which bound a probe or sweep varies.
struct BoundRef {
  enum class Kind { out, layer, all_layers } kind = Kind::out;
  std::size_t layer = 0;  // 0-based constraint index for Kind::layer

  /// eps_out, eps_layer (all layer bounds) or eps_<i> (1-based layer).
  static BoundRef parse(std::string_view name);
  std::string name() const;
  /// Sets the bound; layer kinds need a populated eps_layer list.
  void apply(ConstraintSet& cs, double value) const;
  double multiplier(const DualState& duals) const;
};

// ---------------------------------------------------------------- subgradient probe

struct ProbePoint {
  double eps = 0.0;
  double objective = 0.0;
  double lambda = 0.0;
  bool converged = true;
  double worst_margin = 0.0;  // over all other converged grid points
};

struct SensitivityProbe {
  std::vector<ProbePoint> points;
  /// margins[i][j] = P(eps_j) - P(eps_i) + lambda_i (eps_j - eps_i); NaN
  /// when either run did not converge.
  std::vector<std::vector<double>> margins;

  static double tolerance(double objective);  // 0.05 * max(1, |P|)
  /// Every margin >= -tolerance(P(eps_i)).
  bool margins_ok() const;
  /// P non-increasing in eps up to the tolerance.
  bool monotone_ok() const;
};

struct ProbeOptions {
  std::size_t jobs = 1;
  /// Runs whose final objective exceeds this are flagged as not converged;
  /// non-positive means log(num_classes).
  double converge_threshold = 0.0;
};

/// Trains one run per grid value of `bound` (strictly increasing grid) and
/// reports pairwise subgradient margins.
template <std::floating_point Real>
SensitivityProbe subgradient_probe(const Experiment<Real>& base, const BoundRef& bound,
                                   std::span<const double> grid, const ProbeOptions& options = {});

// ---------------------------------------------------------------- epsilon sweep

struct SweepRow {
  double value = 0.0;
  double test_acc = 0.0;
  double lambda_final = 0.0;
};

/// One seeded run per value. Throws InputError for an empty list or
/// duplicate values. For a shared layer bound lambda_final is the mean
/// layer multiplier.
template <std::floating_point Real>
std::vector<SweepRow> epsilon_sweep(const Experiment<Real>& base, const BoundRef& bound,
                                    std::span<const double> values, std::size_t jobs = 1);

// ---------------------------------------------------------------- CSV

struct MixedEvalRow {
  std::size_t k = 0;
  MixedMode mode = MixedMode::top;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
};

void write_rank_csv(std::ostream& out, const LayerRanking& ranking);
void write_mixed_eval_csv(std::ostream& out, std::span<const MixedEvalRow> rows);
void write_probe_csv(std::ostream& out, const SensitivityProbe& probe);
void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows);

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdqat/adam.hpp"
#include "pdqat/constraints.hpp"
#include "pdqat/data.hpp"
#include "pdqat/gradcheck.hpp"
#include "pdqat/shadow_model.hpp"

// Primal-dual quantization-aware training.
//
// Each epoch runs one pass of Adam steps on the empirical Lagrangian
//   loss(f(x), y) + sum_l lambda_l (d_l - eps_l) + lambda_out (d - eps_out)
// with the multipliers held fixed, then evaluates dataset-mean slacks and
// takes one projected ascent step lambda <- max(0, lambda + eta_d * s).

namespace pdqat {

struct DualValues {
  std::vector<double> layer;
  double out = 0.0;
  friend bool operator==(const DualValues&, const DualValues&) = default;
};

struct DualState {
  std::vector<double> layer;  // lambda_1 .. lambda_{L-1}
  double out = 1.0;
  double dual_lr = 0.01;
  /// Inactive constraints are left out of the Lagrangian and keep lambda = 0.
  std::vector<bool> layer_active;
  bool out_active = true;
  /// Multipliers after each completed epoch.
  std::vector<DualValues> trajectory;

  static DualState make(std::size_t constraints, double dual_lr, double layer_init = 0.0,
                        double out_init = 1.0);
  std::size_t size() const { return layer.size(); }
  DualValues values() const { return {layer, out}; }
  /// Appends the current values to the trajectory.
  void record();
};

/// lambda <- max(0, lambda + eta_d * s) for every active constraint, then
/// records the new values.
void dual_step(DualState& duals, const SlackReport& slacks);

struct TrainRunConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  AdamConfig adam;
  double dual_lr = 0.01;
  ConstraintSet constraints;
  std::uint64_t seed = 0;
  bool early_stop = true;
  /// Held-out share of the training set when no validation set is given.
  double val_fraction = 0.1;
  /// Epochs without validation improvement before stopping; 0 keeps going
  /// and only restores the best epoch.
  std::size_t patience = 10;
  double lambda_layer_init = 0.0;
  double lambda_out_init = 1.0;
  bool update_duals = true;
  bool constrain_layers = true;
  bool constrain_output = true;
  /// Samples used per slack pass; 0 evaluates the whole training set.
  std::size_t slack_subsample = 0;

  /// Throws InputError on inconsistent values. An empty eps_layer list is
  /// filled with the bitwidth defaults by the trainers.
  void validate(std::size_t num_constraints) const;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double full_acc = 0.0;   // training set, eval mode
  double quant_acc = 0.0;  // training set, eval mode
  SlackReport slacks;
  std::optional<DualValues> duals;  // absent for the baseline
  std::optional<double> val_acc;
};

struct TrainReport {
  DualState duals;
  bool has_duals = true;
  std::vector<EpochMetrics> metrics;
  std::size_t completed_epochs = 0;
  /// Epoch whose parameters the model holds on return (0 = initialization).
  std::size_t best_epoch = 0;
  std::optional<double> best_val_acc;
  bool early_stopped = false;
};

template <std::floating_point Real>
struct TrainHooks {
  /// Called after every epoch with that epoch's metrics.
  std::function<void(const EpochMetrics&, const ShadowModel<Real>&)> on_epoch;
};

template <std::floating_point Real>
struct LagrangianResult {
  double value = 0.0;
  double loss = 0.0;
  TraceDistances distances;
  DualForwardTrace<Real> trace;
};

struct LagrangianOptions {
  PassOptions pass;
  bool accumulate_grad = true;
};

/// Evaluates the empirical Lagrangian on one batch and, when requested,
/// accumulates its gradient into the model's parameter grads. With
/// `frozen`, the quantized chain is reused from an earlier trace of the same
/// batch. Throws NumericError naming the first non-finite term.
template <std::floating_point Real>
LagrangianResult<Real> empirical_lagrangian(ShadowModel<Real>& model, const Tensor<Real>& batch,
                                            std::span<const int> labels, const DualState& duals,
                                            const ConstraintSet& cs,
                                            const LagrangianOptions& options = {},
                                            const DualForwardTrace<Real>* frozen = nullptr);

/// One pass of minibatch Adam steps on the Lagrangian with fixed duals.
/// Returns the sample-weighted mean loss over the pass.
template <std::floating_point Real>
double primal_epoch(ShadowModel<Real>& model, const DualState& duals, const ConstraintSet& cs,
                    const Dataset<Real>& data, Adam<Real>& adam, std::size_t batch_size,
                    std::uint64_t shuffle_seed);

/// Dataset-mean slacks in eval mode. `subsample` > 0 evaluates a seeded
/// subset of that many samples.
template <std::floating_point Real>
SlackReport evaluate_slacks(ShadowModel<Real>& model, const Dataset<Real>& data,
                            const ConstraintSet& cs, std::size_t subsample = 0,
                            std::uint64_t seed = 0);

/// Mean cross-entropy of the full-precision model over `data`, eval mode.
template <std::floating_point Real>
double empirical_risk(ShadowModel<Real>& model, const Dataset<Real>& data);

template <std::floating_point Real>
TrainReport train_pdqat(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                        const Dataset<Real>& train, const Dataset<Real>* val = nullptr,
                        const TrainHooks<Real>& hooks = {});

/// Minimizes the quantized model's loss with straight-through gradients.
template <std::floating_point Real>
TrainReport train_baseline_ste(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                               const Dataset<Real>& train, const Dataset<Real>* val = nullptr,
                               const TrainHooks<Real>& hooks = {});

/// Plain full-precision training; no quantized chain is involved in the
/// updates.
template <std::floating_point Real>
TrainReport train_unconstrained(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                                const Dataset<Real>& train, const Dataset<Real>* val = nullptr,
                                const TrainHooks<Real>& hooks = {});

/// Shuffle seed of a given epoch in a run seeded with `seed`.
std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch);

// ---------------------------------------------------------------- metrics CSV

std::vector<std::string> metrics_header(std::size_t constraints);
void write_metrics_header(std::ostream& out, std::size_t constraints);
/// One row; multiplier cells stay empty when the epoch carries no duals.
void write_metrics_row(std::ostream& out, const EpochMetrics& m, std::size_t constraints);
void write_metrics_csv(std::ostream& out, const TrainReport& report, std::size_t constraints);
/// Shortest decimal that round-trips the double.
std::string format_number(double v);

// ---------------------------------------------------------------- gradcheck

struct LagrangianCheckOptions {
  GradcheckOptions fd;
  /// Reuse the base point's quantized chain in every finite-difference
  /// evaluation (the objective the detached gradient differentiates).
  bool frozen_shadow = true;
  /// Multiplies the analytic gradient before comparison; test fixture for a
  /// broken backward pass.
  double corrupt_scale = 1.0;
};

/// Compares the analytic Lagrangian gradient on one batch against central
/// differences over every parameter. Batch-norm layers use batch statistics
/// without touching their running estimates.
template <std::floating_point Real>
GradcheckReport check_lagrangian_gradient(ShadowModel<Real>& model, const Tensor<Real>& batch,
                                          std::span<const int> labels, const DualState& duals,
                                          const ConstraintSet& cs,
                                          const LagrangianCheckOptions& options = {});

}  // namespace pdqat

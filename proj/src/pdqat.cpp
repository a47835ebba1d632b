// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/pdqat.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "pdqat/errors.hpp"
#include "pdqat/loss.hpp"

namespace pdqat {

// ---------------------------------------------------------------- duals

DualState DualState::make(std::size_t constraints, double dual_lr, double layer_init,
                          double out_init) {
  if (!(dual_lr > 0) || !std::isfinite(dual_lr)) throw InputError("dual learning rate must be > 0");
  if (!(layer_init >= 0) || !(out_init >= 0) || !std::isfinite(layer_init) ||
      !std::isfinite(out_init))
    throw InputError("initial multipliers must be finite and >= 0");
  DualState d;
  d.layer.assign(constraints, layer_init);
  d.out = out_init;
  d.dual_lr = dual_lr;
  d.layer_active.assign(constraints, true);
  return d;
}

void DualState::record() { trajectory.push_back(values()); }

void dual_step(DualState& duals, const SlackReport& slacks) {
  if (slacks.layer_slack.size() != duals.layer.size())
    throw DimensionError("dual_step: slack count does not match multiplier count");
  for (std::size_t l = 0; l < duals.layer.size(); ++l) {
    if (duals.layer_active[l])
      duals.layer[l] = std::max(0.0, duals.layer[l] + duals.dual_lr * slacks.layer_slack[l]);
  }
  if (duals.out_active) duals.out = std::max(0.0, duals.out + duals.dual_lr * slacks.out_slack);
  duals.record();
}

void TrainRunConfig::validate(std::size_t num_constraints) const {
  if (batch_size == 0) throw InputError("train: batch size must be >= 1");
  if (!(dual_lr > 0) || !std::isfinite(dual_lr)) throw InputError("train: dual learning rate must be > 0");
  if (!(val_fraction > 0 && val_fraction < 1))
    throw InputError("train: validation fraction must lie in (0, 1)");
  if (!(lambda_layer_init >= 0) || !(lambda_out_init >= 0))
    throw InputError("train: initial multipliers must be >= 0");
  adam.validate();
  // An empty bound list means "use the bitwidth defaults".
  if (!constraints.eps_layer.empty() || num_constraints == 0) constraints.validate(num_constraints);
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (std::uint64_t(epoch) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------- Lagrangian

namespace {

void require_finite(double v, const std::string& term) {
  if (!std::isfinite(v)) throw NumericError("non-finite value in Lagrangian term '" + term + "'");
}

template <std::floating_point Real>
Tensor<Real> sum_tensors(Tensor<Real> a, const Tensor<Real>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

template <std::floating_point Real>
LagrangianResult<Real> empirical_lagrangian(ShadowModel<Real>& model, const Tensor<Real>& batch,
                                            std::span<const int> labels, const DualState& duals,
                                            const ConstraintSet& cs,
                                            const LagrangianOptions& options,
                                            const DualForwardTrace<Real>* frozen) {
  const std::size_t C = model.num_constraints();
  if (duals.layer.size() != C || cs.eps_layer.size() != C)
    throw DimensionError("Lagrangian: multiplier or bound count does not match the model");
  PassOptions pass = options.pass;
  if (options.accumulate_grad) pass.record = true;

  LagrangianResult<Real> r;
  r.trace = model.forward_pair(batch, pass, frozen);
  const auto& trace = r.trace;
  const auto ce = softmax_cross_entropy(trace.full_output(), labels);
  require_finite(ce.loss, "loss");
  r.loss = ce.loss;
  r.value = ce.loss;

  r.distances.layer.resize(C);
  for (std::size_t l = 0; l < C; ++l) {
    const double d = layer_distance(trace.hybrid[l], trace.quant[l + 1], cs.mse_norm);
    require_finite(d, "d_" + std::to_string(l + 1));
    r.distances.layer[l] = d;
    if (duals.layer_active[l]) {
      const double term = duals.layer[l] * (d - cs.eps_layer[l]);
      require_finite(term, "lambda_" + std::to_string(l + 1) + " * s_" + std::to_string(l + 1));
      r.value += term;
    }
  }
  const Tensor<Real> p_full = softmax(trace.full_output());
  const Tensor<Real> p_quant = softmax(trace.quant_output());
  r.distances.out = output_distance(p_full, p_quant, cs.log_clamp);
  require_finite(r.distances.out, "d_out");
  if (duals.out_active) {
    const double term = duals.out * (r.distances.out - cs.eps_out);
    require_finite(term, "lambda_out * s_out");
    r.value += term;
  }

  if (options.accumulate_grad) {
    Tensor<Real> g = ce.grad;
    if (duals.out_active && duals.out != 0.0)
      g = sum_tensors(std::move(g), output_distance_logit_grad(p_full, p_quant, cs.log_clamp, duals.out));
    model.backward_full(g, trace.full_tapes);
    for (std::size_t l = 0; l < C; ++l) {
      if (!duals.layer_active[l] || duals.layer[l] == 0.0) continue;
      model.backward_block(
          l, layer_distance_grad(trace.hybrid[l], trace.quant[l + 1], cs.mse_norm, duals.layer[l]),
          trace.hybrid_tapes[l]);
    }
  }
  return r;
}

template <std::floating_point Real>
double primal_epoch(ShadowModel<Real>& model, const DualState& duals, const ConstraintSet& cs,
                    const Dataset<Real>& data, Adam<Real>& adam, std::size_t batch_size,
                    std::uint64_t shuffle_seed) {
  BatchSequence<Real> batches(data, batch_size, shuffle_seed);
  auto groups = model.parameter_groups();
  const LagrangianOptions opts{.pass = {.training = true, .update_stats = true, .record = true},
                               .accumulate_grad = true};
  double loss_sum = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    model.zero_grad();
    const auto r = empirical_lagrangian(model, b.features, b.labels, duals, cs, opts);
    adam.step(groups);
    loss_sum += r.loss * double(b.size());
  }
  return loss_sum / double(data.size());
}

// ---------------------------------------------------------------- evaluation

namespace {

struct EvalPass {
  SlackReport slacks;
  double full_acc = 0;
  double quant_acc = 0;
};

constexpr std::size_t kEvalBatch = 512;

template <std::floating_point Real>
EvalPass evaluate_pass(ShadowModel<Real>& model, const Dataset<Real>& data,
                       const ConstraintSet& cs, std::size_t subsample, std::uint64_t seed) {
  data.validate();
  const Dataset<Real>* source = &data;
  Dataset<Real> sub;
  if (subsample > 0 && subsample < data.size()) {
    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(subsample);
    sub = data.subset(idx);
    source = &sub;
  }
  const PassOptions eval{.training = false, .update_stats = false, .record = false};
  DistanceAccumulator acc(model.num_constraints());
  std::size_t full_ok = 0, quant_ok = 0;
  BatchSequence<Real> batches(*source, kEvalBatch, std::nullopt);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    const auto trace = model.forward_pair(b.features, eval);
    acc.add(trace_distances(trace, cs), b.size());
    const auto pf = argmax_rows(trace.full_output());
    const auto pq = argmax_rows(trace.quant_output());
    for (std::size_t j = 0; j < b.size(); ++j) {
      full_ok += pf[j] == b.labels[j];
      quant_ok += pq[j] == b.labels[j];
    }
  }
  EvalPass out;
  out.slacks = compute_slacks(acc, cs);
  out.full_acc = double(full_ok) / double(source->size());
  out.quant_acc = double(quant_ok) / double(source->size());
  return out;
}

}  // namespace

template <std::floating_point Real>
SlackReport evaluate_slacks(ShadowModel<Real>& model, const Dataset<Real>& data,
                            const ConstraintSet& cs, std::size_t subsample, std::uint64_t seed) {
  return evaluate_pass(model, data, cs, subsample, seed).slacks;
}

template <std::floating_point Real>
double empirical_risk(ShadowModel<Real>& model, const Dataset<Real>& data) {
  data.validate();
  const PassOptions eval{.training = false, .update_stats = false, .record = false};
  BatchSequence<Real> batches(data, kEvalBatch, std::nullopt);
  double total = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    total += softmax_cross_entropy(model.forward_full(b.features, eval), b.labels).loss *
             double(b.size());
  }
  return total / double(data.size());
}

// ---------------------------------------------------------------- trainers

namespace {

enum class Mode { pdqat, baseline, unconstrained };

template <std::floating_point Real>
double baseline_epoch(ShadowModel<Real>& model, const Dataset<Real>& data, Adam<Real>& adam,
                      std::size_t batch_size, std::uint64_t shuffle_seed) {
  BatchSequence<Real> batches(data, batch_size, shuffle_seed);
  auto groups = model.parameter_groups();
  const PassOptions train{.training = true, .update_stats = true, .record = true};
  const PassOptions stats{.training = true, .update_stats = true, .record = false};
  double loss_sum = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    model.zero_grad();
    std::vector<BlockTape<Real>> tapes;
    std::vector<Tensor<Real>> qw;
    const Tensor<Real> logits = model.forward_quant(b.features, train, &tapes, &qw);
    const auto ce = softmax_cross_entropy(logits, b.labels);
    require_finite(ce.loss, "loss");
    model.backward_quant_ste(ce.grad, tapes, qw);
    // Keeps the full-precision batch-norm estimates current for reporting.
    (void)model.forward_full(b.features, stats);
    adam.step(groups);
    loss_sum += ce.loss * double(b.size());
  }
  return loss_sum / double(data.size());
}

template <std::floating_point Real>
double unconstrained_epoch(ShadowModel<Real>& model, const Dataset<Real>& data, Adam<Real>& adam,
                           std::size_t batch_size, std::uint64_t shuffle_seed) {
  BatchSequence<Real> batches(data, batch_size, shuffle_seed);
  auto groups = model.parameter_groups();
  const PassOptions train{.training = true, .update_stats = true, .record = true};
  const PassOptions stats{.training = true, .update_stats = true, .record = false};
  double loss_sum = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    model.zero_grad();
    std::vector<BlockTape<Real>> tapes;
    const Tensor<Real> logits = model.forward_full(b.features, train, &tapes);
    const auto ce = softmax_cross_entropy(logits, b.labels);
    require_finite(ce.loss, "loss");
    model.backward_full(ce.grad, tapes);
    // Keeps the quantized batch-norm estimates current for reporting.
    (void)model.forward_quant(b.features, stats);
    adam.step(groups);
    loss_sum += ce.loss * double(b.size());
  }
  return loss_sum / double(data.size());
}

template <std::floating_point Real>
TrainReport run_training(Mode mode, ShadowModel<Real>& model, const TrainRunConfig& cfg,
                         const Dataset<Real>& train, const Dataset<Real>* val,
                         const TrainHooks<Real>& hooks) {
  const std::size_t C = model.num_constraints();
  ConstraintSet cs = cfg.constraints;
  if (cs.eps_layer.empty() && C > 0) {
    auto defaults = ConstraintSet::defaults_for(model.quant(), cs.eps_out);
    cs.eps_layer = std::move(defaults.eps_layer);
  }
  cfg.validate(C);
  cs.validate(C);
  train.validate();

  TrainReport report;
  report.has_duals = mode == Mode::pdqat;
  report.duals = DualState::make(C, cfg.dual_lr, cfg.lambda_layer_init, cfg.lambda_out_init);
  if (!cfg.constrain_layers) {
    report.duals.layer_active.assign(C, false);
    report.duals.layer.assign(C, 0.0);
  }
  if (!cfg.constrain_output) {
    report.duals.out_active = false;
    report.duals.out = 0.0;
  }

  const Dataset<Real>* train_set = &train;
  const Dataset<Real>* val_set = val;
  std::pair<Dataset<Real>, Dataset<Real>> split;
  if (cfg.early_stop && !val && cfg.epochs > 0) {
    split = split_dataset(train, cfg.val_fraction, cfg.seed);
    train_set = &split.first;
    val_set = &split.second;
  }

  Adam<Real> adam(cfg.adam);
  std::vector<Block<Real>> best_blocks;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    adam.set_epoch(epoch - 1);
    const std::uint64_t seed = epoch_seed(cfg.seed, epoch - 1);
    double loss = 0;
    switch (mode) {
      case Mode::pdqat:
        loss = primal_epoch(model, report.duals, cs, *train_set, adam, cfg.batch_size, seed);
        break;
      case Mode::baseline:
        loss = baseline_epoch(model, *train_set, adam, cfg.batch_size, seed);
        break;
      case Mode::unconstrained:
        loss = unconstrained_epoch(model, *train_set, adam, cfg.batch_size, seed);
        break;
    }
    if (!std::isfinite(loss))
      throw NumericError("training diverged: loss is not finite at epoch " + std::to_string(epoch));

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss;
    const EvalPass ev = evaluate_pass(model, *train_set, cs, cfg.slack_subsample, seed);
    m.full_acc = ev.full_acc;
    m.quant_acc = ev.quant_acc;
    m.slacks = ev.slacks;
    if (mode == Mode::pdqat) {
      if (cfg.update_duals)
        dual_step(report.duals, m.slacks);
      else
        report.duals.record();
      m.duals = report.duals.values();
    }
    if (val_set) {
      m.val_acc = mode == Mode::unconstrained ? full_eval_accuracy(model, *val_set)
                                              : quantized_eval_accuracy(model, *val_set);
    }
    report.metrics.push_back(m);
    report.completed_epochs = epoch;
    if (hooks.on_epoch) hooks.on_epoch(report.metrics.back(), model);

    if (cfg.early_stop && m.val_acc) {
      if (!report.best_val_acc || *m.val_acc > *report.best_val_acc) {
        report.best_val_acc = m.val_acc;
        report.best_epoch = epoch;
        best_blocks = model.blocks();
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        report.early_stopped = true;
        break;
      }
    }
  }

  if (cfg.early_stop && report.best_epoch > 0) {
    if (report.best_epoch != report.completed_epochs) model.blocks() = std::move(best_blocks);
  } else {
    report.best_epoch = report.completed_epochs;
  }
  return report;
}

}  // namespace

template <std::floating_point Real>
TrainReport train_pdqat(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                        const Dataset<Real>& train, const Dataset<Real>* val,
                        const TrainHooks<Real>& hooks) {
  return run_training(Mode::pdqat, model, cfg, train, val, hooks);
}

template <std::floating_point Real>
TrainReport train_baseline_ste(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                               const Dataset<Real>& train, const Dataset<Real>* val,
                               const TrainHooks<Real>& hooks) {
  return run_training(Mode::baseline, model, cfg, train, val, hooks);
}

template <std::floating_point Real>
TrainReport train_unconstrained(ShadowModel<Real>& model, const TrainRunConfig& cfg,
                                const Dataset<Real>& train, const Dataset<Real>* val,
                                const TrainHooks<Real>& hooks) {
  return run_training(Mode::unconstrained, model, cfg, train, val, hooks);
}

// ---------------------------------------------------------------- metrics CSV

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> metrics_header(std::size_t constraints) {
  std::vector<std::string> h{"epoch", "train_loss", "full_acc", "quant_acc"};
  for (const char* prefix : {"d_", "s_", "lambda_"}) {
    for (std::size_t l = 1; l <= constraints; ++l) h.push_back(prefix + std::to_string(l));
    h.push_back(std::string(prefix) + "out");
  }
  return h;
}

void write_metrics_header(std::ostream& out, std::size_t constraints) {
  const auto header = metrics_header(constraints);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
}

void write_metrics_row(std::ostream& out, const EpochMetrics& m, std::size_t constraints) {
  if (m.slacks.layer_distance.size() != constraints || m.slacks.layer_slack.size() != constraints)
    throw DimensionError("metrics row: constraint count mismatch");
  out << m.epoch << ',' << format_number(m.train_loss) << ',' << format_number(m.full_acc) << ','
      << format_number(m.quant_acc);
  for (double d : m.slacks.layer_distance) out << ',' << format_number(d);
  out << ',' << format_number(m.slacks.out_distance);
  for (double s : m.slacks.layer_slack) out << ',' << format_number(s);
  out << ',' << format_number(m.slacks.out_slack);
  if (m.duals) {
    for (double l : m.duals->layer) out << ',' << format_number(l);
    out << ',' << format_number(m.duals->out);
  } else {
    out << std::string(constraints + 1, ',');
  }
  out << '\n';
}

void write_metrics_csv(std::ostream& out, const TrainReport& report, std::size_t constraints) {
  write_metrics_header(out, constraints);
  for (const auto& m : report.metrics) write_metrics_row(out, m, constraints);
}

// ---------------------------------------------------------------- gradcheck

template <std::floating_point Real>
GradcheckReport check_lagrangian_gradient(ShadowModel<Real>& model, const Tensor<Real>& batch,
                                          std::span<const int> labels, const DualState& duals,
                                          const ConstraintSet& cs,
                                          const LagrangianCheckOptions& options) {
  const PassOptions pass{.training = true, .update_stats = false, .record = true};
  model.zero_grad();
  const auto base = empirical_lagrangian(model, batch, labels, duals, cs,
                                         {.pass = pass, .accumulate_grad = true});

  std::vector<Tensor<Real>> grads;
  std::vector<GradTarget<Real>> targets;
  std::size_t count = 0;
  for (const auto& b : model.blocks()) count += b.params.all().size();
  grads.reserve(count);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    for (auto& p : model.blocks()[l].params.all()) {
      Tensor<Real> g = p.grad;
      for (auto& v : g.data()) v = Real(double(v) * options.corrupt_scale);
      grads.push_back(std::move(g));
      targets.push_back({"layer " + std::to_string(l + 1) + "/" + p.name, &p.value, &grads.back()});
    }
  }
  const PassOptions probe{.training = true, .update_stats = false, .record = false};
  const DualForwardTrace<Real>* frozen = options.frozen_shadow ? &base.trace : nullptr;
  auto objective = [&]() {
    return empirical_lagrangian(model, batch, labels, duals, cs,
                                {.pass = probe, .accumulate_grad = false}, frozen)
        .value;
  };
  return gradcheck<Real>(targets, objective, options.fd);
}

#define PDQAT_INSTANTIATE(R)                                                                     \
  template LagrangianResult<R> empirical_lagrangian(ShadowModel<R>&, const Tensor<R>&,            \
                                                    std::span<const int>, const DualState&,       \
                                                    const ConstraintSet&,                         \
                                                    const LagrangianOptions&,                     \
                                                    const DualForwardTrace<R>*);                  \
  template double primal_epoch(ShadowModel<R>&, const DualState&, const ConstraintSet&,          \
                               const Dataset<R>&, Adam<R>&, std::size_t, std::uint64_t);         \
  template SlackReport evaluate_slacks(ShadowModel<R>&, const Dataset<R>&, const ConstraintSet&, \
                                       std::size_t, std::uint64_t);                              \
  template double empirical_risk(ShadowModel<R>&, const Dataset<R>&);                            \
  template TrainReport train_pdqat(ShadowModel<R>&, const TrainRunConfig&, const Dataset<R>&,    \
                                   const Dataset<R>*, const TrainHooks<R>&);                     \
  template TrainReport train_baseline_ste(ShadowModel<R>&, const TrainRunConfig&,                \
                                          const Dataset<R>&, const Dataset<R>*,                  \
                                          const TrainHooks<R>&);                                 \
  template TrainReport train_unconstrained(ShadowModel<R>&, const TrainRunConfig&,               \
                                           const Dataset<R>&, const Dataset<R>*,                 \
                                           const TrainHooks<R>&);                                \
  template GradcheckReport check_lagrangian_gradient(ShadowModel<R>&, const Tensor<R>&,          \
                                                     std::span<const int>, const DualState&,     \
                                                     const ConstraintSet&,                       \
                                                     const LagrangianCheckOptions&);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)
#undef PDQAT_INSTANTIATE

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/sensitivity.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include "pdqat/errors.hpp"

namespace pdqat {

RankStatistic rank_statistic_from_string(std::string_view s) {
  if (s == "final") return RankStatistic::final_value;
  if (s == "mean") return RankStatistic::trajectory_mean;
  throw InputError("unknown rank statistic '" + std::string(s) + "' (expected final or mean)");
}

LayerRanking rank_layers(std::span<const double> lambdas) {
  LayerRanking out;
  for (std::size_t i = 0; i < lambdas.size(); ++i) out.push_back({i + 1, lambdas[i], 0});
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedLayer& a, const RankedLayer& b) { return a.lambda > b.lambda; });
  for (std::size_t r = 0; r < out.size(); ++r) out[r].rank = r + 1;
  return out;
}

LayerRanking rank_layers(const DualState& duals, RankStatistic statistic) {
  if (statistic == RankStatistic::final_value || duals.trajectory.empty())
    return rank_layers(duals.layer);
  std::vector<double> mean(duals.layer.size(), 0.0);
  for (const auto& t : duals.trajectory)
    for (std::size_t l = 0; l < mean.size(); ++l) mean[l] += t.layer[l];
  for (auto& m : mean) m /= double(duals.trajectory.size());
  return rank_layers(mean);
}

std::string_view to_string(MixedMode m) { return m == MixedMode::top ? "top" : "bottom"; }

MixedMode mixed_mode_from_string(std::string_view s) {
  if (s == "top") return MixedMode::top;
  if (s == "bottom") return MixedMode::bottom;
  throw InputError("unknown mode '" + std::string(s) + "' (expected top or bottom)");
}

template <std::floating_point Real>
double mixed_precision_eval(ShadowModel<Real>& model, const LayerRanking& ranking, std::size_t k,
                            MixedMode mode, const Dataset<Real>& data) {
  const std::size_t C = model.num_constraints();
  if (k > C) {
    throw InputError("mixed precision: K = " + std::to_string(k) + " outside [0, " +
                     std::to_string(C) + "]");
  }
  if (ranking.size() != C) throw InputError("mixed precision: ranking does not cover every constrained layer");
  const QuantSpec saved = model.quant();
  QuantSpec q = saved;
  for (std::size_t i = 0; i < k; ++i) {
    const RankedLayer& r = mode == MixedMode::top ? ranking[i] : ranking[C - 1 - i];
    if (r.layer < 1 || r.layer > C) throw InputError("mixed precision: ranking has an invalid layer id");
    q.set(r.layer - 1, false, 0);
  }
  model.set_quant_spec(q);
  double acc = 0;
  try {
    acc = quantized_eval_accuracy(model, data);
  } catch (...) {
    model.set_quant_spec(saved);
    throw;
  }
  model.set_quant_spec(saved);
  return acc;
}

// ---------------------------------------------------------------- experiments

template <std::floating_point Real>
RunOutcome run_experiment(const Experiment<Real>& exp) {
  if (!exp.train_data) throw InputError("experiment: no training data");
  RunOutcome out;
  ShadowModel<Real> model(exp.model, exp.quant, exp.init_seed);
  try {
    out.report = train_pdqat(model, exp.train, *exp.train_data);
    out.objective = empirical_risk(model, *exp.train_data);
  } catch (const NumericError& e) {
    out.finished = false;
    out.error = e.what();
    out.objective = std::numeric_limits<double>::quiet_NaN();
  }
  out.test_acc = exp.test_data && out.finished ? quantized_eval_accuracy(model, *exp.test_data)
                                               : std::numeric_limits<double>::quiet_NaN();
  return out;
}

template <std::floating_point Real>
std::vector<RunOutcome> run_experiments(std::span<const Experiment<Real>> exps, std::size_t jobs) {
  std::vector<RunOutcome> results(exps.size());
  std::vector<std::exception_ptr> errors(exps.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < exps.size(); i = next++) {
      try {
        results[i] = run_experiment(exps[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(exps.size(), 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

BoundRef BoundRef::parse(std::string_view name) {
  if (name == "eps_out") return {Kind::out, 0};
  if (name == "eps_layer") return {Kind::all_layers, 0};
  if (name.starts_with("eps_")) {
    std::size_t id = 0;
    const auto digits = name.substr(4);
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), id);
    if (res.ec == std::errc{} && res.ptr == digits.data() + digits.size() && id >= 1)
      return {Kind::layer, id - 1};
  }
  throw InputError("unknown bound '" + std::string(name) +
                   "' (expected eps_out, eps_layer or eps_<layer>)");
}

std::string BoundRef::name() const {
  switch (kind) {
    case Kind::out: return "eps_out";
    case Kind::all_layers: return "eps_layer";
    case Kind::layer: return "eps_" + std::to_string(layer + 1);
  }
  return {};
}

void BoundRef::apply(ConstraintSet& cs, double value) const {
  switch (kind) {
    case Kind::out:
      cs.eps_out = value;
      return;
    case Kind::all_layers:
      std::fill(cs.eps_layer.begin(), cs.eps_layer.end(), value);
      return;
    case Kind::layer:
      if (layer >= cs.eps_layer.size())
        throw InputError("bound " + name() + " does not exist in this model");
      cs.eps_layer[layer] = value;
      return;
  }
}

double BoundRef::multiplier(const DualState& duals) const {
  switch (kind) {
    case Kind::out: return duals.out;
    case Kind::layer: return duals.layer.at(layer);
    case Kind::all_layers:
      if (duals.layer.empty()) return 0.0;
      return std::accumulate(duals.layer.begin(), duals.layer.end(), 0.0) / double(duals.layer.size());
  }
  return 0.0;
}

namespace {

template <std::floating_point Real>
std::vector<Experiment<Real>> variants(const Experiment<Real>& base, const BoundRef& bound,
                                       std::span<const double> values) {
  std::vector<Experiment<Real>> out;
  for (double v : values) {
    if (!std::isfinite(v) || v < 0) throw InputError("bound values must be finite and >= 0");
    Experiment<Real> e = base;
    ConstraintSet& cs = e.train.constraints;
    const std::size_t C = e.model.blocks.size() - 1;
    if (cs.eps_layer.empty() && C > 0)
      cs.eps_layer = ConstraintSet::defaults_for(e.quant, cs.eps_out).eps_layer;
    bound.apply(cs, v);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

double SensitivityProbe::tolerance(double objective) {
  return 0.05 * std::max(1.0, std::abs(objective));
}

bool SensitivityProbe::margins_ok() const {
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = 0; j < points.size(); ++j) {
      const double m = margins[i][j];
      if (!std::isnan(m) && m < -tolerance(points[i].objective)) return false;
    }
  return true;
}

bool SensitivityProbe::monotone_ok() const {
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      if (!points[i].converged || !points[j].converged) continue;
      if (points[j].objective > points[i].objective + tolerance(points[i].objective)) return false;
    }
  return true;
}

template <std::floating_point Real>
SensitivityProbe subgradient_probe(const Experiment<Real>& base, const BoundRef& bound,
                                   std::span<const double> grid, const ProbeOptions& options) {
  if (grid.empty()) throw InputError("probe: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw InputError("probe: grid must be strictly increasing");
  const auto exps = variants(base, bound, grid);
  const auto outcomes = run_experiments<Real>(exps, options.jobs);
  const double threshold = options.converge_threshold > 0
                               ? options.converge_threshold
                               : std::log(double(base.model.num_classes()));

  SensitivityProbe probe;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ProbePoint p;
    p.eps = grid[i];
    p.objective = outcomes[i].objective;
    p.lambda = outcomes[i].finished ? bound.multiplier(outcomes[i].report.duals) : 0.0;
    p.converged = outcomes[i].finished && p.objective <= threshold;
    probe.points.push_back(p);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  probe.margins.assign(grid.size(), std::vector<double>(grid.size(), nan));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto& pi = probe.points[i];
    pi.worst_margin = pi.converged ? std::numeric_limits<double>::infinity() : nan;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto& pj = probe.points[j];
      if (!pi.converged || !pj.converged) continue;
      const double m = i == j ? 0.0 : pj.objective - pi.objective + pi.lambda * (pj.eps - pi.eps);
      probe.margins[i][j] = m;
      pi.worst_margin = std::min(pi.worst_margin, m);
    }
  }
  return probe;
}

template <std::floating_point Real>
std::vector<SweepRow> epsilon_sweep(const Experiment<Real>& base, const BoundRef& bound,
                                    std::span<const double> values, std::size_t jobs) {
  if (values.empty()) throw InputError("sweep: empty value list");
  std::set<double> seen;
  for (double v : values)
    if (!seen.insert(v).second) throw InputError("sweep: duplicate value " + format_number(v));
  const auto exps = variants(base, bound, values);
  const auto outcomes = run_experiments<Real>(exps, jobs);
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!outcomes[i].finished)
      throw NumericError("sweep: run for " + bound.name() + " = " + format_number(values[i]) +
                         " diverged: " + outcomes[i].error);
    rows.push_back({values[i], outcomes[i].test_acc, bound.multiplier(outcomes[i].report.duals)});
  }
  return rows;
}

// ---------------------------------------------------------------- CSV

namespace {

std::string cell(double v) { return std::isnan(v) ? std::string() : format_number(v); }

}  // namespace

void write_rank_csv(std::ostream& out, const LayerRanking& ranking) {
  out << "layer,lambda,rank\n";
  for (const auto& r : ranking) out << r.layer << ',' << format_number(r.lambda) << ',' << r.rank << '\n';
}

void write_mixed_eval_csv(std::ostream& out, std::span<const MixedEvalRow> rows) {
  out << "K,mode,accuracy,seed\n";
  for (const auto& r : rows)
    out << r.k << ',' << to_string(r.mode) << ',' << format_number(r.accuracy) << ',' << r.seed << '\n';
}

void write_probe_csv(std::ostream& out, const SensitivityProbe& probe) {
  out << "eps,objective,lambda,worst_margin\n";
  for (const auto& p : probe.points)
    out << format_number(p.eps) << ',' << cell(p.objective) << ',' << format_number(p.lambda) << ','
        << cell(p.worst_margin) << '\n';
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "value,test_acc,lambda_final\n";
  for (const auto& r : rows)
    out << format_number(r.value) << ',' << cell(r.test_acc) << ',' << format_number(r.lambda_final) << '\n';
}

#define PDQAT_INSTANTIATE(R)                                                                      \
  template double mixed_precision_eval(ShadowModel<R>&, const LayerRanking&, std::size_t,         \
                                       MixedMode, const Dataset<R>&);                             \
  template RunOutcome run_experiment(const Experiment<R>&);                                       \
  template std::vector<RunOutcome> run_experiments(std::span<const Experiment<R>>, std::size_t); \
  template SensitivityProbe subgradient_probe(const Experiment<R>&, const BoundRef&,              \
                                              std::span<const double>, const ProbeOptions&);      \
  template std::vector<SweepRow> epsilon_sweep(const Experiment<R>&, const BoundRef&,             \
                                               std::span<const double>, std::size_t);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)
#undef PDQAT_INSTANTIATE

}  // namespace pdqat

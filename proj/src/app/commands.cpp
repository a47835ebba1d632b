// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "app/commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <random>

#include "app/config.hpp"
#include "pdqat/checkpoint.hpp"
#include "pdqat/errors.hpp"
#include "pdqat/pdqat.hpp"
#include "pdqat/sensitivity.hpp"

namespace pdqat::app {

namespace {

template <class Fn>
int guarded(Io io, const char* command, Fn&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    io.err << "pdqat " << command << ": numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    io.err << "pdqat " << command << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    io.err << "pdqat " << command << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    io.err << "pdqat " << command << ": internal error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::filesystem::path prepare_output_dir(const std::filesystem::path& configured) {
  const auto dir = resolve_output_dir(configured);
  std::filesystem::create_directories(dir);
  return dir;
}

template <class Fn>
int dispatch(Precision p, Fn&& fn) {
  return p == Precision::f64 ? fn.template operator()<double>() : fn.template operator()<float>();
}

// ---------------------------------------------------------------- train

template <std::floating_point Real>
int train_impl(RunConfig cfg, bool baseline, Io io) {
  auto data = load_data<Real>(cfg.data);
  bind_model_to_data(cfg, data.train);
  ShadowModel<Real> model(cfg.model, QuantSpec::from_bits(cfg.bits), cfg.train.seed);
  const std::size_t C = model.num_constraints();

  const auto dir = prepare_output_dir(cfg.output_dir);
  auto metrics = open_output(dir / "metrics.csv");
  write_metrics_header(metrics, C);
  metrics.flush();
  TrainHooks<Real> hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const ShadowModel<Real>&) {
    write_metrics_row(metrics, m, C);
    metrics.flush();
  };

  const TrainReport report = baseline ? train_baseline_ste(model, cfg.train, data.train, static_cast<const Dataset<Real>*>(nullptr), hooks)
                                      : train_pdqat(model, cfg.train, data.train, static_cast<const Dataset<Real>*>(nullptr), hooks);
  save_checkpoint(dir / "checkpoint.pdqat", model, baseline ? nullptr : &report.duals,
                  data.train.normalization, cfg.source_text);

  io.out << (baseline ? "baseline" : "pdqat") << ": " << report.completed_epochs << " epochs";
  if (report.early_stopped) io.out << " (early stop)";
  io.out << ", parameters from epoch " << report.best_epoch << '\n';
  const Dataset<Real>& eval = data.test ? *data.test : data.train;
  io.out << (data.test ? "test" : "train") << " accuracy: full "
         << format_number(full_eval_accuracy(model, eval)) << ", quantized "
         << format_number(quantized_eval_accuracy(model, eval)) << '\n';
  if (!baseline && C > 0) {
    io.out << "multipliers:";
    for (std::size_t l = 0; l < C; ++l) io.out << " lambda_" << l + 1 << '=' << format_number(report.duals.layer[l]);
    io.out << '\n';
  }
  if (!baseline) io.out << "lambda_out=" << format_number(report.duals.out) << '\n';
  io.out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "checkpoint.pdqat").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- mixed eval

std::vector<MixedMode> modes_of(const std::string& mode) {
  if (mode == "both") return {MixedMode::top, MixedMode::bottom};
  return {mixed_mode_from_string(mode)};
}

template <std::floating_point Real>
void eval_rows(ShadowModel<Real>& model, const LayerRanking& ranking,
               const MixedEvalOptions& opts, const Dataset<Real>& data, std::uint64_t seed,
               std::vector<MixedEvalRow>& rows) {
  for (std::size_t k : opts.ks)
    for (MixedMode m : modes_of(opts.mode))
      rows.push_back({k, m, mixed_precision_eval(model, ranking, k, m, data), seed});
}

template <std::floating_point Real>
const Dataset<Real>& pick_split(const LoadedData<Real>& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split != "test") throw InputError("--split must be test or train");
  if (!data.test) throw InputError("--split test requested but the config defines no test data");
  return *data.test;
}

template <std::floating_point Real>
int mixed_eval_impl(RunConfig cfg, const MixedEvalOptions& opts, Io io) {
  if (opts.ks.empty()) throw InputError("--k needs at least one value");
  for (const auto& m : modes_of(opts.mode)) (void)m;
  std::vector<MixedEvalRow> rows;

  if (opts.checkpoint) {
    if (!opts.seeds.empty()) throw InputError("--seeds trains fresh models and cannot be combined with --checkpoint");
    auto ckpt = load_checkpoint<Real>(*opts.checkpoint);
    if (!ckpt.duals)
      throw InputError("checkpoint '" + opts.checkpoint->string() +
                       "' holds no dual variables (baseline run); mixed precision needs a PDQAT checkpoint");
    const auto data = load_data<Real>(cfg.data, &ckpt.normalization);
    if (data.train.sample_shape() != ckpt.model.spec().input_shape &&
        shape_numel(data.train.sample_shape()) != shape_numel(ckpt.model.spec().input_shape))
      throw InputError("checkpoint input shape does not match the configured data");
    eval_rows(ckpt.model, rank_layers(*ckpt.duals), opts, pick_split(data, opts.split),
              cfg.train.seed, rows);
  } else {
    const auto data = load_data<Real>(cfg.data);
    bind_model_to_data(cfg, data.train);
    const std::vector<std::uint64_t> seeds = opts.seeds.empty() ? std::vector{cfg.train.seed} : opts.seeds;
    for (std::uint64_t s : seeds) {
      TrainRunConfig t = cfg.train;
      t.seed = s;
      ShadowModel<Real> model(cfg.model, QuantSpec::from_bits(cfg.bits), s);
      const TrainReport report = train_pdqat(model, t, data.train);
      eval_rows(model, rank_layers(report.duals), opts, pick_split(data, opts.split), s, rows);
    }
  }

  const auto dir = prepare_output_dir(cfg.output_dir);
  auto out = open_output(dir / "mixed_eval.csv");
  write_mixed_eval_csv(out, rows);

  std::map<std::pair<std::size_t, int>, std::pair<double, std::size_t>> means;
  for (const auto& r : rows) {
    auto& m = means[{r.k, int(r.mode)}];
    m.first += r.accuracy;
    ++m.second;
  }
  for (const auto& [key, v] : means) {
    io.out << "K=" << key.first << ' ' << to_string(MixedMode(key.second))
           << " mean accuracy " << format_number(v.first / double(v.second)) << " over " << v.second
           << " run(s)\n";
  }
  io.out << "wrote " << (dir / "mixed_eval.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

template <std::floating_point Real>
int sweep_impl(RunConfig cfg, const SweepOptions& opts, Io io) {
  const BoundRef bound = BoundRef::parse(opts.param);
  if (bound.kind == BoundRef::Kind::layer)
    throw InputError("--param must be eps_out or eps_layer (a shared layer bound)");
  const auto data = load_data<Real>(cfg.data);
  bind_model_to_data(cfg, data.train);
  Experiment<Real> base;
  base.model = cfg.model;
  base.quant = QuantSpec::from_bits(cfg.bits);
  base.init_seed = cfg.train.seed;
  base.train = cfg.train;
  base.train_data = &data.train;
  base.test_data = data.test ? &*data.test : nullptr;
  const auto rows = epsilon_sweep(base, bound, opts.values, opts.jobs);

  const auto dir = prepare_output_dir(cfg.output_dir);
  auto out = open_output(dir / "sweep.csv");
  write_sweep_csv(out, rows);
  for (const auto& r : rows) {
    io.out << bound.name() << '=' << format_number(r.value) << " test_acc="
           << (std::isnan(r.test_acc) ? std::string("n/a") : format_number(r.test_acc))
           << " lambda_final=" << format_number(r.lambda_final) << '\n';
  }
  io.out << "wrote " << (dir / "sweep.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckSetup {
  ModelSpec model;
  QuantSpec quant;
  ConstraintSet constraints;
};

GradcheckSetup default_gradcheck_setup() {
  GradcheckSetup s;
  s.model.input_shape = {8};
  s.model.blocks = {BlockSpec{.kind = LayerKind::dense, .units = 6, .activation = Activation::clip},
                    BlockSpec{.kind = LayerKind::dense, .units = 3, .activation = Activation::none}};
  const std::vector<int> bits{2, 0};
  s.quant = QuantSpec::from_bits(bits);
  s.constraints = ConstraintSet::defaults_for(s.quant, 0.2);
  return s;
}

GradcheckSetup gradcheck_setup_from(RunConfig cfg) {
  if (cfg.model.input_shape.empty()) {
    const auto data = load_data<double>(cfg.data);
    bind_model_to_data(cfg, data.train);
  }
  GradcheckSetup s;
  s.model = cfg.model;
  s.quant = QuantSpec::from_bits(cfg.bits);
  s.constraints = cfg.train.constraints;
  if (s.constraints.eps_layer.empty())
    s.constraints.eps_layer = ConstraintSet::defaults_for(s.quant, s.constraints.eps_out).eps_layer;
  return s;
}

int gradcheck_impl(const GradcheckSetup& setup, const GradcheckCommandOptions& opts, Io io) {
  if (opts.points == 0) throw InputError("--points must be >= 1");
  constexpr std::size_t kBatch = 16;
  constexpr double kMinKink = 1e-3;
  const std::size_t classes = setup.model.num_classes();
  const std::size_t C = setup.model.blocks.size() - 1;

  GradcheckReport worst;
  std::size_t entries = 0;
  for (std::size_t p = 0; p < opts.points; ++p) {
    std::mt19937_64 rng(epoch_seed(opts.seed, p));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, int(classes) - 1);

    for (int attempt = 0;; ++attempt) {
      if (attempt == 100)
        throw NumericError("gradcheck: no generic point found away from activation kinks");
      ShadowModel<double> model(setup.model, setup.quant, rng());
      Shape shape{kBatch};
      shape.insert(shape.end(), setup.model.input_shape.begin(), setup.model.input_shape.end());
      Tensor<double> x(shape);
      for (auto& v : x.data()) v = normal(rng);
      std::vector<int> y(kBatch);
      for (auto& v : y) v = label(rng);
      DualState duals = DualState::make(C, 0.01);
      for (auto& l : duals.layer) l = 1.0 - unit(rng);  // (0, 1]
      duals.out = 1.0 - unit(rng);

      const PassOptions probe{.training = true, .update_stats = false, .record = true};
      if (model.min_kink_distance(model.forward_pair(x, probe)) < kMinKink) continue;

      LagrangianCheckOptions o;
      o.corrupt_scale = opts.corrupt_backward ? 1.5 : 1.0;
      const auto r = check_lagrangian_gradient(model, x, y, duals, setup.constraints, o);
      entries += r.entries_checked;
      if (p == 0 || r.max_rel_error > worst.max_rel_error) worst = r;
      break;
    }
  }
  const bool pass = worst.max_rel_error < opts.tolerance;
  io.out << "gradcheck: " << opts.points << " points, " << entries
         << " entries, max relative error " << format_number(worst.max_rel_error) << " at "
         << worst.worst_target << '[' << worst.worst_index << "] (analytic "
         << format_number(worst.worst_analytic) << ", numeric " << format_number(worst.worst_numeric)
         << ")\n"
         << (pass ? "PASS" : "FAIL") << " (tolerance " << format_number(opts.tolerance) << ")\n";
  return pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int cmd_train(const TrainOptions& opts, Io io) {
  return guarded(io, "train", [&] {
    RunConfig cfg = load_config(opts.config);
    return dispatch(cfg.precision, [&]<std::floating_point Real>() {
      return train_impl<Real>(cfg, opts.baseline, io);
    });
  });
}

int cmd_rank(const RankOptions& opts, Io io) {
  return guarded(io, "rank", [&] {
    const RankStatistic stat = rank_statistic_from_string(opts.statistic);
    const auto ckpt = load_checkpoint<double>(opts.checkpoint);
    if (!ckpt.duals) {
      throw InputError("checkpoint '" + opts.checkpoint.string() +
                       "' holds no dual variables (it comes from a baseline run); "
                       "ranking needs a PDQAT checkpoint");
    }
    const LayerRanking ranking = rank_layers(*ckpt.duals, stat);
    const auto dir = prepare_output_dir(
        opts.output_dir ? *opts.output_dir : resolve_output_dir(opts.checkpoint.parent_path()));
    auto out = open_output(dir / "rank.csv");
    write_rank_csv(out, ranking);
    for (const auto& r : ranking)
      io.out << r.rank << ". layer " << r.layer << " lambda=" << format_number(r.lambda) << '\n';
    io.out << "wrote " << (dir / "rank.csv").string() << '\n';
    return kExitOk;
  });
}

int cmd_mixed_eval(const MixedEvalOptions& opts, Io io) {
  return guarded(io, "mixed-eval", [&] {
    RunConfig cfg = load_config(opts.config);
    return dispatch(cfg.precision, [&]<std::floating_point Real>() {
      return mixed_eval_impl<Real>(cfg, opts, io);
    });
  });
}

int cmd_sweep(const SweepOptions& opts, Io io) {
  return guarded(io, "sweep", [&] {
    RunConfig cfg = load_config(opts.config);
    return dispatch(cfg.precision, [&]<std::floating_point Real>() {
      return sweep_impl<Real>(cfg, opts, io);
    });
  });
}

int cmd_gradcheck(const GradcheckCommandOptions& opts, Io io) {
  return guarded(io, "gradcheck", [&] {
    const GradcheckSetup setup =
        opts.config ? gradcheck_setup_from(load_config(*opts.config)) : default_gradcheck_setup();
    return gradcheck_impl(setup, opts, io);
  });
}

}  // namespace pdqat::app

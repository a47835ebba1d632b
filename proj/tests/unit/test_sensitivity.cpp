// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "pdqat/errors.hpp"
#include "pdqat/sensitivity.hpp"
#include "test_util.hpp"

namespace pdqat {
namespace {

std::vector<std::size_t> order(const LayerRanking& r) {
  std::vector<std::size_t> out;
  for (const auto& e : r) out.push_back(e.layer);
  return out;
}

ModelSpec mlp(std::vector<std::size_t> widths) {
  ModelSpec s;
  s.input_shape = {2};
  for (std::size_t i = 0; i < widths.size(); ++i) {
    BlockSpec b;
    b.units = widths[i];
    b.activation = i + 1 == widths.size() ? Activation::none : Activation::clip;
    s.blocks.push_back(b);
  }
  return s;
}

TEST(Rank, DescendingByMultiplier) {
  const std::vector<double> l{0.1, 0.9, 0.0};
  const auto r = rank_layers(l);
  EXPECT_EQ(order(r), (std::vector<std::size_t>{2, 1, 3}));
  EXPECT_EQ(r[0].rank, 1u);
  EXPECT_EQ(r[2].rank, 3u);
}

TEST(Rank, TiesKeepLayerOrder) {
  const std::vector<double> l{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(order(rank_layers(l)), (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(Rank, InvariantUnderPositiveScaling) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 2);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> l(6);
    for (auto& v : l) v = std::round(u(rng) * 4) / 4;  // force some ties
    const auto base = order(rank_layers(l));
    for (double c : {0.5, 4.0, 1e3}) {
      std::vector<double> s = l;
      for (auto& v : s) v *= c;
      EXPECT_EQ(order(rank_layers(s)), base);
    }
    auto sorted = base;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6}));
  }
}

TEST(Rank, TrajectoryMeanStatistic) {
  DualState d = DualState::make(2, 0.01);
  d.trajectory = {{{1.0, 0.0}, 1.0}, {{0.0, 0.2}, 1.0}};
  d.layer = {0.0, 0.2};
  EXPECT_EQ(order(rank_layers(d, RankStatistic::final_value)), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(order(rank_layers(d, RankStatistic::trajectory_mean)), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(rank_statistic_from_string("mean"), RankStatistic::trajectory_mean);
  EXPECT_THROW(rank_statistic_from_string("median"), InputError);
}

class MixedEval : public ::testing::Test {
 protected:
  Dataset<double> data = gen_synthetic<double>({.kind = SyntheticKind::spirals, .n_per_class = 60, .seed = 2});
  ShadowModel<double> model{mlp({8, 8, 8, 2}), QuantSpec::uniform(4, 1, false), 3};
  LayerRanking ranking = rank_layers(std::vector<double>{0.3, 0.1, 0.2});
};

TEST_F(MixedEval, ZeroKeepsQuantizedAccuracy) {
  const double q = quantized_eval_accuracy(model, data);
  EXPECT_EQ(mixed_precision_eval(model, ranking, 0, MixedMode::top, data), q);
  EXPECT_EQ(mixed_precision_eval(model, ranking, 0, MixedMode::bottom, data), q);
}

TEST_F(MixedEval, AllConstrainedLayersHighMatchesFullWhenOutputIsHigh) {
  model.set_precision(3, false, 0);
  EXPECT_EQ(mixed_precision_eval(model, ranking, 3, MixedMode::top, data),
            full_eval_accuracy(model, data));
}

TEST_F(MixedEval, RestoresTheSpec) {
  const QuantSpec before = model.quant();
  mixed_precision_eval(model, ranking, 2, MixedMode::bottom, data);
  EXPECT_EQ(model.quant(), before);
}

TEST_F(MixedEval, SelectsRankedLayers) {
  // top-1 de-quantizes layer 1 (largest multiplier)
  ShadowModel<double> manual = model;
  manual.set_precision(0, false, 0);
  EXPECT_EQ(mixed_precision_eval(model, ranking, 1, MixedMode::top, data),
            quantized_eval_accuracy(manual, data));
  ShadowModel<double> low = model;
  low.set_precision(1, false, 0);
  EXPECT_EQ(mixed_precision_eval(model, ranking, 1, MixedMode::bottom, data),
            quantized_eval_accuracy(low, data));
}

TEST_F(MixedEval, KOutOfRange) {
  EXPECT_THROW(mixed_precision_eval(model, ranking, 4, MixedMode::top, data), InputError);
  EXPECT_THROW(mixed_mode_from_string("middle"), InputError);
}

TEST(BoundRefTest, Parse) {
  EXPECT_EQ(BoundRef::parse("eps_out").kind, BoundRef::Kind::out);
  EXPECT_EQ(BoundRef::parse("eps_layer").kind, BoundRef::Kind::all_layers);
  const auto b = BoundRef::parse("eps_3");
  EXPECT_EQ(b.kind, BoundRef::Kind::layer);
  EXPECT_EQ(b.layer, 2u);
  EXPECT_EQ(b.name(), "eps_3");
  EXPECT_THROW(BoundRef::parse("eps_0"), InputError);
  EXPECT_THROW(BoundRef::parse("eps_x"), InputError);
  EXPECT_THROW(BoundRef::parse("lr"), InputError);
}

TEST(BoundRefTest, ApplyAndMultiplier) {
  ConstraintSet cs;
  cs.eps_layer = {0.1, 0.2};
  BoundRef::parse("eps_layer").apply(cs, 0.5);
  EXPECT_EQ(cs.eps_layer, (std::vector<double>{0.5, 0.5}));
  BoundRef::parse("eps_2").apply(cs, 0.7);
  EXPECT_EQ(cs.eps_layer[1], 0.7);
  BoundRef::parse("eps_out").apply(cs, 0.9);
  EXPECT_EQ(cs.eps_out, 0.9);
  EXPECT_THROW(BoundRef::parse("eps_3").apply(cs, 0.1), InputError);
  DualState d = DualState::make(2, 0.01);
  d.layer = {1.0, 3.0};
  d.out = 0.25;
  EXPECT_EQ(BoundRef::parse("eps_layer").multiplier(d), 2.0);
  EXPECT_EQ(BoundRef::parse("eps_out").multiplier(d), 0.25);
  EXPECT_EQ(BoundRef::parse("eps_2").multiplier(d), 3.0);
}

class Experiments : public ::testing::Test {
 protected:
  Dataset<double> train = gen_synthetic<double>({.n_per_class = 40, .seed = 4});
  Dataset<double> test = gen_synthetic<double>({.n_per_class = 20, .seed = 5});
  Experiment<double> base() const {
    Experiment<double> e;
    e.model = mlp({6, 2});
    e.quant = QuantSpec::from_bits(std::vector<int>{2, 0});
    e.init_seed = 9;
    e.train.epochs = 3;
    e.train.batch_size = 16;
    e.train.early_stop = false;
    e.train.adam.lr = 0.01;
    e.train_data = &train;
    e.test_data = &test;
    return e;
  }
};

TEST_F(Experiments, SingleValueSweepEqualsPlainRun) {
  const std::vector<double> v{0.3};
  const auto rows = epsilon_sweep(base(), BoundRef::parse("eps_out"), v);
  ASSERT_EQ(rows.size(), 1u);
  Experiment<double> e = base();
  e.train.constraints.eps_out = 0.3;
  ShadowModel<double> m(e.model, e.quant, e.init_seed);
  const auto r = train_pdqat(m, e.train, train);
  EXPECT_EQ(rows[0].value, 0.3);
  EXPECT_EQ(rows[0].lambda_final, r.duals.out);
  EXPECT_EQ(rows[0].test_acc, quantized_eval_accuracy(m, test));
}

TEST_F(Experiments, SweepRejectsBadLists) {
  const std::vector<double> empty, dup{0.1, 0.2, 0.1}, neg{-0.1};
  EXPECT_THROW(epsilon_sweep(base(), BoundRef::parse("eps_out"), empty), InputError);
  EXPECT_THROW(epsilon_sweep(base(), BoundRef::parse("eps_out"), dup), InputError);
  EXPECT_THROW(epsilon_sweep(base(), BoundRef::parse("eps_out"), neg), InputError);
}

TEST_F(Experiments, ParallelRunsMatchSerialRuns) {
  std::vector<Experiment<double>> exps;
  for (int i = 0; i < 4; ++i) {
    auto e = base();
    e.init_seed = 20 + i;
    exps.push_back(e);
  }
  const auto serial = run_experiments<double>(exps, 1);
  const auto parallel = run_experiments<double>(exps, 3);
  ASSERT_EQ(serial.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(serial[i].objective, parallel[i].objective);
    EXPECT_EQ(serial[i].report.duals.values(), parallel[i].report.duals.values());
  }
}

TEST_F(Experiments, ProbeGrid) {
  const std::vector<double> grid{0.05, 0.5, 2.0};
  const auto p = subgradient_probe(base(), BoundRef::parse("eps_out"), grid);
  ASSERT_EQ(p.points.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    if (p.points[i].converged) {
      EXPECT_EQ(p.margins[i][i], 0.0);
    }
    EXPECT_EQ(p.points[i].eps, grid[i]);
  }
  const std::vector<double> unsorted{0.5, 0.05};
  EXPECT_THROW(subgradient_probe(base(), BoundRef::parse("eps_out"), unsorted), InputError);
  const std::vector<double> repeated{0.5, 0.5};
  EXPECT_THROW(subgradient_probe(base(), BoundRef::parse("eps_out"), repeated), InputError);
}

TEST(ProbeTolerance, Formula) {
  EXPECT_EQ(SensitivityProbe::tolerance(0.3), 0.05);
  EXPECT_EQ(SensitivityProbe::tolerance(-4.0), 0.2);
}

TEST(ProbeChecks, MarginsAndMonotonicity) {
  SensitivityProbe p;
  p.points = {{0.1, 1.0, 0.5, true, 0}, {0.2, 0.96, 0.1, true, 0}};
  p.margins = {{0, 0.96 - 1.0 + 0.5 * 0.1}, {1.0 - 0.96 + 0.1 * -0.1, 0}};
  EXPECT_TRUE(p.margins_ok());
  EXPECT_TRUE(p.monotone_ok());
  p.points[1].objective = 1.2;
  EXPECT_FALSE(p.monotone_ok());
  p.margins[0][1] = -0.2;
  EXPECT_FALSE(p.margins_ok());
}

TEST(Csv, Schemas) {
  std::ostringstream rank, mixed, probe, sweep;
  write_rank_csv(rank, rank_layers(std::vector<double>{0.2, 0.4}));
  EXPECT_EQ(rank.str(), "layer,lambda,rank\n2,0.4,1\n1,0.2,2\n");
  const MixedEvalRow rows[] = {{1, MixedMode::top, 0.75, 3}};
  write_mixed_eval_csv(mixed, rows);
  EXPECT_EQ(mixed.str(), "K,mode,accuracy,seed\n1,top,0.75,3\n");
  SensitivityProbe p;
  p.points = {{0.5, 0.25, 0.125, true, 0}};
  write_probe_csv(probe, p);
  EXPECT_EQ(probe.str(), "eps,objective,lambda,worst_margin\n0.5,0.25,0.125,0\n");
  const SweepRow s[] = {{0.05, std::nan(""), 1.5}};
  write_sweep_csv(sweep, s);
  EXPECT_EQ(sweep.str(), "value,test_acc,lambda_final\n0.05,,1.5\n");
}

}  // namespace
}  // namespace pdqat

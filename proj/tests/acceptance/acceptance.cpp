// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

// Acceptance suite: one line per criterion, nonzero exit when any fails.
// Pass criterion numbers as arguments to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "app/commands.hpp"
#include "pdqat/checkpoint.hpp"
#include "pdqat/errors.hpp"
#include "pdqat/quantize.hpp"
#include "pdqat/sensitivity.hpp"

namespace {

using namespace pdqat;
using Clock = std::chrono::steady_clock;

const std::filesystem::path kFixtures = PDQAT_FIXTURE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ModelSpec mlp(std::vector<std::size_t> widths, bool batchnorm = false) {
  ModelSpec s;
  s.input_shape = {2};
  for (std::size_t i = 0; i < widths.size(); ++i) {
    BlockSpec b;
    b.units = widths[i];
    const bool last = i + 1 == widths.size();
    b.activation = last ? Activation::none : Activation::clip;
    b.batchnorm = batchnorm && !last;
    s.blocks.push_back(b);
  }
  return s;
}

template <std::floating_point Real>
std::pair<Dataset<Real>, Dataset<Real>> blobs(std::size_t train_per_class, std::size_t test_per_class,
                                              std::uint64_t seed,
                                              SyntheticKind kind = SyntheticKind::blobs,
                                              double noise = 1.0) {
  auto train = gen_synthetic<Real>({.kind = kind, .n_per_class = train_per_class, .noise = noise, .seed = seed});
  auto test = gen_synthetic<Real>(
      {.kind = kind, .n_per_class = test_per_class, .noise = noise, .seed = seed + 1000});
  const auto norm = fit_standardization(train);
  apply_normalization(train, norm);
  apply_normalization(test, norm);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  std::ostringstream out, err;
  app::GradcheckCommandOptions o;
  o.points = 20;
  o.tolerance = 1e-4;
  const auto t0 = Clock::now();
  const int code = app::cmd_gradcheck(o, {out, err});
  const double t = seconds_since(t0);
  std::string line = out.str();
  while (!line.empty() && line.back() == '\n') line.pop_back();
  std::replace(line.begin(), line.end(), '\n', ' ');
  return {code == 0 && t < 10.0, line + ", " + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome quantizer_exactness() {
  const auto t0 = Clock::now();
  constexpr std::size_t kN = 100000;
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-1.0, 2.0);
  std::normal_distribution<double> normal;
  std::size_t violations = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (violations++ == 0) first = what;
  };
  auto on_grid = [](double z, int k) {
    const double s = z * grid_levels(k);
    return std::abs(s - std::round(s)) <= 1e-9 && z >= 0.0 && z <= 1.0;
  };

  for (int k : {1, 2, 4, 8}) {
    const std::string tag = "k=" + std::to_string(k) + ": ";
    std::vector<double> z(kN);
    for (auto& v : z) v = unit(rng);
    z[0] = 0.0;
    z[1] = 1.0;
    std::sort(z.begin(), z.end());
    double prev = -1.0;
    for (double v : z) {
      const double r = fixed_point_round(v, k);
      if (!on_grid(r, k)) fail(tag + "round off grid");
      if (fixed_point_round(r, k) != r) fail(tag + "round not idempotent");
      if (r < prev) fail(tag + "round not monotone");
      prev = r;
    }

    Tensor<double> a({kN}, 0.0);
    for (auto& v : a.data()) v = wide(rng);
    const auto qa = quantize_activations(a, k);
    const auto qaa = quantize_activations(qa, k);
    for (std::size_t i = 0; i < kN; ++i) {
      if (!on_grid(qa[i], k)) fail(tag + "q_a off grid");
      if (qaa[i] != qa[i]) fail(tag + "q_a not idempotent");
    }

    Tensor<double> w({kN}, 0.0);
    for (auto& v : w.data()) v = normal(rng);
    const auto qw = quantize_weights(w, k);
    for (double v : qw.data()) {
      if (!on_grid((v + 1.0) / 2.0, k)) fail(tag + "q_w off grid");
      if (k == 1 && v != -1.0 && v != 1.0) fail(tag + "q_w outside {-1, +1}");
    }
  }
  const double t = seconds_since(t0);
  std::string detail = std::to_string(violations) + " violations over 4 x 1e5 inputs";
  if (violations) detail += " (first: " + first + ")";
  return {violations == 0 && t < 5.0, detail + ", " + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------- 3

Outcome dual_invariants() {
  const auto [train, test] = blobs<double>(200, 10, 31);
  std::size_t bad_sign = 0, bad_direction = 0, checked = 0, increases = 0;

  // Quantized run: the slacks change sign over training.
  {
    ShadowModel<double> m(mlp({16, 16, 2}), QuantSpec::from_bits(std::vector<int>{2, 2, 0}), 7);
    TrainRunConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 64;
    cfg.adam.lr = 0.01;
    cfg.early_stop = false;
    cfg.seed = 3;
    cfg.dual_lr = 0.05;
    cfg.constraints = ConstraintSet::defaults_for(m.quant(), 0.1);
    cfg.constraints.eps_layer = {0.02, 0.02};
    const auto r = train_pdqat(m, cfg, train, static_cast<const Dataset<double>*>(nullptr));
    DualValues prev{std::vector<double>(2, cfg.lambda_layer_init), cfg.lambda_out_init};
    for (const auto& e : r.metrics) {
      const DualValues& cur = *e.duals;
      auto check = [&](double before, double after, double slack) {
        ++checked;
        if (after < 0) ++bad_sign;
        if ((after > before) != (slack > 0)) ++bad_direction;
        if (after > before) ++increases;
      };
      for (std::size_t l = 0; l < 2; ++l) check(prev.layer[l], cur.layer[l], e.slacks.layer_slack[l]);
      check(prev.out, cur.out, e.slacks.out_slack);
      prev = cur;
    }
  }

  // High-precision run: every layer slack is exactly -eps, so lambda decays
  // linearly and must hit zero within ceil(lambda0 / (eta * eps)) epochs.
  std::size_t late = 0;
  std::string reached;
  {
    ShadowModel<double> m(mlp({16, 16, 2}), QuantSpec::from_bits(std::vector<int>{0, 0, 0}), 7);
    TrainRunConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 64;
    cfg.adam.lr = 0.01;
    cfg.early_stop = false;
    cfg.dual_lr = 0.1;
    cfg.lambda_layer_init = 0.1234;
    cfg.constraints.eps_layer = {0.05, 0.08};
    cfg.constraints.eps_out = 0.2;
    const auto r = train_pdqat(m, cfg, train, static_cast<const Dataset<double>*>(nullptr));
    for (std::size_t l = 0; l < 2; ++l) {
      const double eps = cfg.constraints.eps_layer[l];
      const auto bound = static_cast<std::size_t>(std::ceil(cfg.lambda_layer_init / (cfg.dual_lr * eps)));
      std::size_t hit = 0;
      for (const auto& e : r.metrics) {
        if (e.duals->layer[l] < 0) ++bad_sign;
        if (hit == 0 && e.duals->layer[l] == 0.0) hit = e.epoch;
      }
      if (hit == 0 || hit > bound) ++late;
      reached += (l ? ", " : "") + std::string("lambda_") + std::to_string(l + 1) + " zero at epoch " +
                 std::to_string(hit) + " (bound " + std::to_string(bound) + ")";
    }
  }
  return {bad_sign == 0 && bad_direction == 0 && late == 0,
          std::to_string(checked) + " steps (" + std::to_string(increases) + " increases), " + std::to_string(bad_sign) + " negative, " +
              std::to_string(bad_direction) + " direction mismatches; " + reached};
}

// ---------------------------------------------------------------- 4

Outcome zero_multiplier_collapse() {
  const auto [train, test] = blobs<double>(150, 10, 41);
  std::size_t mismatches = 0, compared = 0;
  for (bool bn : {false, true}) {
    const ModelSpec spec = mlp({12, 12, 2}, bn);
    const QuantSpec quant = QuantSpec::from_bits(std::vector<int>{2, 2, 0});
    TrainRunConfig cfg;
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.adam.lr = 0.01;
    cfg.early_stop = false;
    cfg.seed = 5;
    cfg.lambda_layer_init = 0.0;
    cfg.lambda_out_init = 0.0;
    cfg.update_duals = false;
    ShadowModel<double> a(spec, quant, 11), b(spec, quant, 11);
    const auto ra = train_pdqat(a, cfg, train, static_cast<const Dataset<double>*>(nullptr));
    const auto rb = train_unconstrained(b, cfg, train, static_cast<const Dataset<double>*>(nullptr));
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      ++compared;
      if (ra.metrics[e].train_loss != rb.metrics[e].train_loss) ++mismatches;
    }
    for (std::size_t l = 0; l < a.num_layers(); ++l) {
      const auto& pa = a.blocks()[l].params.all();
      const auto& pb = b.blocks()[l].params.all();
      for (std::size_t p = 0; p < pa.size(); ++p) {
        ++compared;
        if (!(pa[p].value == pb[p].value)) ++mismatches;
      }
      if (bn) {
        ++compared;
        if (!(a.blocks()[l].bn_full.running_mean == b.blocks()[l].bn_full.running_mean &&
              a.blocks()[l].bn_full.running_var == b.blocks()[l].bn_full.running_var))
          ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(compared) + " losses/tensors compared, " +
                               std::to_string(mismatches) + " differ"};
}

// ---------------------------------------------------------------- 5

Outcome toy_task_performance() {
  const auto t0 = Clock::now();
  const auto [train, test] = blobs<double>(1000, 250, 51);
  // Input and output layers stay in high precision: bits [0, 2, 2, 0].
  const ModelSpec spec = mlp({32, 32, 32, 2});
  const QuantSpec quant = QuantSpec::uniform(4, 2);
  TrainRunConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 64;
  cfg.adam.lr = 0.005;
  cfg.early_stop = false;
  cfg.seed = 1;
  cfg.constraints = ConstraintSet::defaults_for(quant, 0.2);

  ShadowModel<double> q(spec, quant, 17);
  train_pdqat(q, cfg, train, static_cast<const Dataset<double>*>(nullptr));
  const double q_acc = quantized_eval_accuracy(q, test);

  ShadowModel<double> f(spec, quant, 17);
  train_unconstrained(f, cfg, train, static_cast<const Dataset<double>*>(nullptr));
  const double f_acc = full_eval_accuracy(f, test);
  const double t = seconds_since(t0);
  return {q_acc >= 0.95 && f_acc - q_acc <= 0.02 && t < 120.0,
          "quantized test acc " + fmt(q_acc) + ", full precision " + fmt(f_acc) + ", " + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------- 6

Outcome layerwise_constraint_effect() {
  double with = 0, without = 0;
  const QuantSpec quant = QuantSpec::from_bits(std::vector<int>{2, 2, 2, 2, 0});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [train, test] = blobs<double>(200, 10, 60 + seed);
    for (bool layers : {true, false}) {
      ShadowModel<double> m(mlp({16, 16, 16, 16, 2}), quant, 100 + seed);
      TrainRunConfig cfg;
      cfg.epochs = 30;
      cfg.batch_size = 32;
      cfg.adam.lr = 0.01;
      cfg.early_stop = false;
      cfg.seed = seed;
      cfg.dual_lr = 1.0;
      cfg.constraints = ConstraintSet::defaults_for(quant, 0.2);
      cfg.constraints.eps_layer.assign(4, 0.005);
      cfg.constrain_layers = layers;
      train_pdqat(m, cfg, train, static_cast<const Dataset<double>*>(nullptr));
      const auto s = evaluate_slacks(m, train, cfg.constraints);
      double mean = 0;
      for (double d : s.layer_distance) mean += d;
      (layers ? with : without) += mean / 4.0 / 5.0;
    }
  }
  const double ratio = with / without;
  return {ratio <= 0.5, "mean layer distance " + fmt(with) + " with layer constraints vs " + fmt(without) +
                            " output-only, ratio " + fmt(ratio, 3)};
}

// ---------------------------------------------------------------- 7

Outcome ranking_utility() {
  // Four-class blobs; hidden layers at 1 bit, input and output layers high.
  double top[3] = {0, 0, 0}, bottom[3] = {0, 0, 0};
  const QuantSpec quant = QuantSpec::uniform(4, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto train = gen_synthetic<double>({.n_per_class = 300, .classes = 4, .noise = 0.6, .seed = 70 + seed});
    auto test = gen_synthetic<double>({.n_per_class = 100, .classes = 4, .noise = 0.6, .seed = 1070 + seed});
    const auto norm = fit_standardization(train);
    apply_normalization(train, norm);
    apply_normalization(test, norm);
    ShadowModel<double> m(mlp({32, 32, 32, 4}), quant, 200 + seed);
    TrainRunConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.adam.lr = 0.01;
    cfg.early_stop = false;
    cfg.seed = seed;
    cfg.dual_lr = 0.1;
    cfg.constraints = ConstraintSet::defaults_for(quant, 0.2);
    cfg.constraints.eps_layer.assign(3, 0.01);
    const auto r = train_pdqat(m, cfg, train, static_cast<const Dataset<double>*>(nullptr));
    const auto ranking = rank_layers(r.duals);
    for (std::size_t k : {1, 2}) {
      top[k] += mixed_precision_eval(m, ranking, k, MixedMode::top, test) / 5.0;
      bottom[k] += mixed_precision_eval(m, ranking, k, MixedMode::bottom, test) / 5.0;
    }
  }
  return {top[1] >= bottom[1] && top[2] >= bottom[2],
          "K=1 top " + fmt(top[1]) + " bottom " + fmt(bottom[1]) + "; K=2 top " + fmt(top[2]) +
              " bottom " + fmt(bottom[2])};
}

// ---------------------------------------------------------------- 8

Outcome subgradient_probe_check() {
  const auto t0 = Clock::now();
  const auto [train, test] = blobs<double>(200, 50, 81);
  Experiment<double> e;
  e.model = mlp({2});
  e.quant = QuantSpec::from_bits(std::vector<int>{2});
  e.init_seed = 3;
  e.train.epochs = 100;
  e.train.batch_size = 32;
  e.train.adam.lr = 0.01;
  e.train.early_stop = false;
  e.train.dual_lr = 0.05;
  e.train.lambda_out_init = 0.0;
  e.train_data = &train;
  e.test_data = &test;
  const std::vector<double> grid{0.05, 0.5, 2.0};
  const auto p = subgradient_probe(e, BoundRef::parse("eps_out"), grid, {.jobs = 3});
  const double t = seconds_since(t0);
  std::string detail;
  bool converged = true;
  for (const auto& pt : p.points) {
    converged = converged && pt.converged;
    detail += "eps=" + fmt(pt.eps) + ": P=" + fmt(pt.objective) + " lambda=" + fmt(pt.lambda) +
              " worst margin " + fmt(pt.worst_margin) + "; ";
  }
  return {converged && p.margins_ok() && p.monotone_ok() && t < 300.0, detail + fmt(t, 3) + " s"};
}

// ---------------------------------------------------------------- 9

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome persistence_and_formats() {
  std::vector<std::string> failures;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("pdqat_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);

  // Checkpoint round trip.
  {
    const auto [train, test] = blobs<float>(50, 10, 91);
    ShadowModel<float> m(mlp({8, 8, 2}, true), QuantSpec::from_bits(std::vector<int>{2, 4, 0}), 3);
    TrainRunConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.early_stop = false;
    const auto r = train_pdqat(m, cfg, train, static_cast<const Dataset<float>*>(nullptr));
    save_checkpoint(dir / "c.pdqat", m, &r.duals, train.normalization, "echo");
    const auto back = load_checkpoint<float>(dir / "c.pdqat");
    bool same = back.model.spec() == m.spec() && back.model.quant() == m.quant() &&
                back.duals && back.duals->values() == r.duals.values() &&
                back.duals->trajectory.size() == r.duals.trajectory.size() &&
                back.normalization.mean == train.normalization.mean &&
                back.normalization.scale == train.normalization.scale && back.config_echo == "echo";
    for (std::size_t l = 0; same && l < m.num_layers(); ++l) {
      const auto& a = m.blocks()[l];
      const auto& b = back.model.blocks()[l];
      for (const auto& p : a.params.all()) same = same && b.params.get(p.name).value == p.value;
      same = same && a.bn_full.running_mean == b.bn_full.running_mean &&
             a.bn_full.running_var == b.bn_full.running_var &&
             a.bn_quant.running_mean == b.bn_quant.running_mean &&
             a.bn_quant.running_var == b.bn_quant.running_var;
    }
    if (!same) failures.push_back("checkpoint round trip differs");
  }

  // IDX fixture: one 2x2 image with pixels {0, 255, 128, 64} labelled 3.
  {
    const auto d = load_idx<double>(kFixtures / "tiny-images.idx3-ubyte", kFixtures / "tiny-labels.idx1-ubyte");
    const bool ok = d.features.shape() == Shape{1, 1, 2, 2} && d.features[0] == 0.0 &&
                    d.features[1] == 1.0 && d.features[2] == 128.0 / 255.0 &&
                    d.features[3] == 64.0 / 255.0 && d.labels == std::vector<int>{3};
    if (!ok) failures.push_back("IDX fixture decoded wrongly");
  }

  // Metrics header: golden file and two independent CLI runs.
  {
    std::string golden = read_all(kFixtures / "metrics_header_3layer.golden");
    while (!golden.empty() && (golden.back() == '\n' || golden.back() == '\r')) golden.pop_back();
    std::ostringstream header;
    write_metrics_header(header, 2);
    if (header.str() != golden + "\n") failures.push_back("metrics header differs from golden");
    const std::string config =
        "model: {layers: [{units: 6}, {units: 6}, {units: 2}]}\n"
        "quant: {bits: [2, 2, 0]}\n"
        "train: {epochs: 1, batch_size: 32, early_stop: false}\n"
        "data: {source: synthetic, n_per_class: 30}\n";
    std::ofstream(dir / "run.yaml") << config;
    for (const char* sub : {"a", "b"}) {
      std::ofstream(dir / "run.yaml") << config << "output_dir: " << (dir / sub).string() << '\n';
      std::ostringstream out, err;
      if (app::cmd_train({dir / "run.yaml"}, {out, err}) != 0) {
        failures.push_back("train run failed: " + err.str());
        continue;
      }
      const std::string csv = read_all(dir / sub / "metrics.csv");
      if (csv.substr(0, csv.find('\n')) != golden) failures.push_back(std::string("run ") + sub + " header differs");
    }
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);

  std::string detail = failures.empty() ? "checkpoint, IDX fixture and metrics header verified" : "";
  for (const auto& f : failures) detail += (detail.empty() ? "" : "; ") + f;
  return {failures.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "quantizer exactness", quantizer_exactness},
      {3, "dual-update invariants", dual_invariants},
      {4, "zero-multiplier collapse", zero_multiplier_collapse},
      {5, "toy-task performance", toy_task_performance},
      {6, "layerwise-constraint effect", layerwise_constraint_effect},
      {7, "ranking utility", ranking_utility},
      {8, "subgradient probe", subgradient_probe_check},
      {9, "persistence and formats", persistence_and_formats},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << c.id << " (" << c.name << "): " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

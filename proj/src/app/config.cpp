// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "app/config.hpp"

#include <cstdlib>
#include <fstream>
#include <initializer_list>
#include <map>
#include <sstream>
#include <string_view>

#include <yaml-cpp/yaml.h>

#include "pdqat/constraints.hpp"

namespace pdqat::app {

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void require_map(const YAML::Node& n, const std::string& path) {
  if (!n.IsMap()) throw ConfigError("config: '" + path + "' must be a mapping");
}

void check_keys(const YAML::Node& n, const std::string& path,
                std::initializer_list<std::string_view> allowed) {
  require_map(n, path.empty() ? "<root>" : path);
  for (const auto& kv : n) {
    const std::string key = kv.first.as<std::string>();
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + join(path, key) + "'");
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& where) {
  if (!n.IsScalar()) throw ConfigError("config: '" + where + "' must be a scalar");
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: '" + where + "' has an invalid value '" + n.Scalar() + "'");
  }
}

template <class T>
T get(const YAML::Node& map, const std::string& path, const char* key, T fallback) {
  const YAML::Node n = map[key];
  if (!n) return fallback;
  return scalar<T>(n, join(path, key));
}

std::size_t get_count(const YAML::Node& map, const std::string& path, const char* key,
                      std::size_t fallback) {
  const YAML::Node n = map[key];
  if (!n) return fallback;
  const long long v = scalar<long long>(n, join(path, key));
  if (v < 0) throw ConfigError("config: '" + join(path, key) + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> get_counts(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) throw ConfigError("config: '" + where + "' must be a list");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const long long v = scalar<long long>(n[i], where + "[" + std::to_string(i) + "]");
    if (v < 0) throw ConfigError("config: '" + where + "' entries must be >= 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::filesystem::path get_path(const YAML::Node& map, const std::string& path, const char* key,
                               const std::filesystem::path& base) {
  const YAML::Node n = map[key];
  if (!n) return {};
  std::filesystem::path p = scalar<std::string>(n, join(path, key));
  return p.is_relative() ? base / p : p;
}

template <class Fn>
auto converting(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config: '" + where + "': " + e.what());
  }
}

ModelSpec parse_model(const YAML::Node& n) {
  check_keys(n, "model", {"input_shape", "layers"});
  ModelSpec spec;
  if (n["input_shape"]) spec.input_shape = get_counts(n["input_shape"], "model.input_shape");
  const YAML::Node layers = n["layers"];
  if (!layers || !layers.IsSequence() || layers.size() == 0)
    throw ConfigError("config: 'model.layers' must be a non-empty list");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string path = "model.layers[" + std::to_string(i) + "]";
    const YAML::Node l = layers[i];
    check_keys(l, path, {"kind", "units", "kernel", "stride", "padding", "activation", "batchnorm", "bias"});
    BlockSpec b;
    b.kind = converting(path + ".kind", [&] {
      return layer_kind_from_string(get<std::string>(l, path, "kind", "dense"));
    });
    b.units = get_count(l, path, "units", 0);
    if (b.units == 0) throw ConfigError("config: '" + path + ".units' is required and must be >= 1");
    b.kernel = get_count(l, path, "kernel", b.kernel);
    b.stride = get_count(l, path, "stride", b.stride);
    b.padding = get_count(l, path, "padding", b.padding);
    const bool last = i + 1 == layers.size();
    b.activation = converting(path + ".activation", [&] {
      return activation_from_string(get<std::string>(l, path, "activation", last ? "none" : "clip"));
    });
    b.batchnorm = get<bool>(l, path, "batchnorm", false);
    b.bias = get<bool>(l, path, "bias", true);
    spec.blocks.push_back(b);
  }
  const BlockSpec& last = spec.blocks.back();
  if (last.kind != LayerKind::dense || last.activation != Activation::none)
    throw ConfigError("config: the last layer must be dense with activation none");
  return spec;
}

void parse_train(const YAML::Node& n, RunConfig& cfg) {
  check_keys(n, "train",
             {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "milestones", "decay",
              "dual_lr", "seed", "early_stop", "val_fraction", "patience", "lambda_layer_init",
              "lambda_out_init", "update_duals", "constrain_layers", "constrain_output",
              "slack_subsample", "precision"});
  TrainRunConfig& t = cfg.train;
  const std::string p = "train";
  t.epochs = get_count(n, p, "epochs", t.epochs);
  t.batch_size = get_count(n, p, "batch_size", t.batch_size);
  t.adam.lr = get<double>(n, p, "lr", t.adam.lr);
  t.adam.beta1 = get<double>(n, p, "beta1", t.adam.beta1);
  t.adam.beta2 = get<double>(n, p, "beta2", t.adam.beta2);
  t.adam.eps = get<double>(n, p, "adam_eps", t.adam.eps);
  if (n["milestones"]) t.adam.milestones = get_counts(n["milestones"], "train.milestones");
  t.adam.decay = get<double>(n, p, "decay", t.adam.decay);
  t.dual_lr = get<double>(n, p, "dual_lr", t.dual_lr);
  t.seed = get<std::uint64_t>(n, p, "seed", t.seed);
  t.early_stop = get<bool>(n, p, "early_stop", t.early_stop);
  t.val_fraction = get<double>(n, p, "val_fraction", t.val_fraction);
  t.patience = get_count(n, p, "patience", t.patience);
  t.lambda_layer_init = get<double>(n, p, "lambda_layer_init", t.lambda_layer_init);
  t.lambda_out_init = get<double>(n, p, "lambda_out_init", t.lambda_out_init);
  t.update_duals = get<bool>(n, p, "update_duals", t.update_duals);
  t.constrain_layers = get<bool>(n, p, "constrain_layers", t.constrain_layers);
  t.constrain_output = get<bool>(n, p, "constrain_output", t.constrain_output);
  t.slack_subsample = get_count(n, p, "slack_subsample", t.slack_subsample);
  const std::string precision = get<std::string>(n, p, "precision", "f32");
  if (precision == "f32")
    cfg.precision = Precision::f32;
  else if (precision == "f64")
    cfg.precision = Precision::f64;
  else
    throw ConfigError("config: 'train.precision' must be f32 or f64");
}

void parse_constraints(const YAML::Node& n, RunConfig& cfg) {
  check_keys(n, "constraints", {"eps_layer", "eps_out", "mse_norm", "log_clamp"});
  ConstraintSet& cs = cfg.train.constraints;
  const std::size_t C = cfg.model.blocks.size() - 1;
  if (const YAML::Node e = n["eps_layer"]) {
    if (e.IsScalar()) {
      cs.eps_layer.assign(C, scalar<double>(e, "constraints.eps_layer"));
    } else if (e.IsSequence()) {
      for (std::size_t i = 0; i < e.size(); ++i)
        cs.eps_layer.push_back(scalar<double>(e[i], "constraints.eps_layer[" + std::to_string(i) + "]"));
      if (cs.eps_layer.size() != C)
        throw ConfigError("config: 'constraints.eps_layer' needs " + std::to_string(C) +
                          " entries (one per layer except the last)");
    } else {
      throw ConfigError("config: 'constraints.eps_layer' must be a number or a list");
    }
  }
  cs.eps_out = get<double>(n, "constraints", "eps_out", cs.eps_out);
  cs.mse_norm = converting("constraints.mse_norm", [&] {
    return mse_norm_from_string(get<std::string>(n, "constraints", "mse_norm", "per_element"));
  });
  cs.log_clamp = get<double>(n, "constraints", "log_clamp", cs.log_clamp);
}

DataConfig parse_data(const YAML::Node& n, const std::filesystem::path& base) {
  check_keys(n, "data",
             {"source", "kind", "n_per_class", "classes", "noise", "seed", "test_n_per_class",
              "train_images", "train_labels", "test_images", "test_labels", "train_csv",
              "test_csv", "label_column", "standardize"});
  DataConfig d;
  const std::string p = "data";
  const std::string source = get<std::string>(n, p, "source", "synthetic");
  if (source == "synthetic") {
    d.source = DataSource::synthetic;
    d.synthetic.kind = converting("data.kind", [&] {
      return synthetic_kind_from_string(get<std::string>(n, p, "kind", "blobs"));
    });
    d.synthetic.n_per_class = get_count(n, p, "n_per_class", d.synthetic.n_per_class);
    d.synthetic.classes = get_count(n, p, "classes", d.synthetic.classes);
    d.synthetic.noise = get<double>(n, p, "noise", d.synthetic.noise);
    d.synthetic.seed = get<std::uint64_t>(n, p, "seed", d.synthetic.seed);
    d.test_n_per_class = get_count(n, p, "test_n_per_class", 0);
    if (d.synthetic.n_per_class == 0 || d.synthetic.classes < 2)
      throw ConfigError("config: synthetic data needs n_per_class >= 1 and classes >= 2");
    if (!(d.synthetic.noise >= 0)) throw ConfigError("config: 'data.noise' must be >= 0");
  } else if (source == "idx") {
    d.source = DataSource::idx;
    d.train_images = get_path(n, p, "train_images", base);
    d.train_labels = get_path(n, p, "train_labels", base);
    d.test_images = get_path(n, p, "test_images", base);
    d.test_labels = get_path(n, p, "test_labels", base);
    if (d.train_images.empty() || d.train_labels.empty())
      throw ConfigError("config: idx data needs 'data.train_images' and 'data.train_labels'");
    if (d.test_images.empty() != d.test_labels.empty())
      throw ConfigError("config: give both or neither of 'data.test_images' and 'data.test_labels'");
  } else if (source == "csv") {
    d.source = DataSource::csv;
    d.train_csv = get_path(n, p, "train_csv", base);
    d.test_csv = get_path(n, p, "test_csv", base);
    d.label_column = get<std::string>(n, p, "label_column", d.label_column);
    if (d.train_csv.empty()) throw ConfigError("config: csv data needs 'data.train_csv'");
  } else {
    throw ConfigError("config: 'data.source' must be synthetic, idx or csv");
  }
  d.standardize = get<bool>(n, p, "standardize", d.source != DataSource::idx);
  return d;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML syntax error: ") + e.what());
  }
  check_keys(root, "", {"model", "quant", "train", "constraints", "data", "output_dir"});
  for (const char* section : {"model", "quant", "data"})
    if (!root[section]) throw ConfigError(std::string("config: missing section '") + section + "'");

  RunConfig cfg;
  cfg.source_text = text;
  cfg.model = parse_model(root["model"]);

  check_keys(root["quant"], "quant", {"bits"});
  const YAML::Node bits = root["quant"]["bits"];
  if (!bits || !bits.IsSequence()) throw ConfigError("config: 'quant.bits' must be a list");
  for (std::size_t i = 0; i < bits.size(); ++i) {
    const int b = scalar<int>(bits[i], "quant.bits[" + std::to_string(i) + "]");
    if (b < 0 || b > kMaxBits)
      throw ConfigError("config: 'quant.bits' entries must lie in [0, " + std::to_string(kMaxBits) + "]");
    cfg.bits.push_back(b);
  }
  if (cfg.bits.size() != cfg.model.blocks.size()) {
    throw ConfigError("config: 'quant.bits' has " + std::to_string(cfg.bits.size()) +
                      " entries for " + std::to_string(cfg.model.blocks.size()) + " layers");
  }

  if (root["train"]) parse_train(root["train"], cfg);
  if (root["constraints"]) parse_constraints(root["constraints"], cfg);
  cfg.data = parse_data(root["data"], base_dir);
  if (root["output_dir"]) cfg.output_dir = scalar<std::string>(root["output_dir"], "output_dir");

  converting("train", [&] {
    cfg.train.validate(cfg.model.blocks.size() - 1);
    return 0;
  });
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::filesystem::path resolve_output_dir(const std::filesystem::path& configured) {
  if (const char* env = std::getenv("PDQAT_OUTPUT_DIR"); env && *env) return env;
  return configured;
}

namespace {

template <std::floating_point Real>
void align_labels(const Dataset<Real>& train, Dataset<Real>& test) {
  if (train.label_names.empty()) return;
  std::map<std::string, int> ids;
  for (std::size_t i = 0; i < train.label_names.size(); ++i) ids[train.label_names[i]] = int(i);
  for (auto& y : test.labels) {
    const std::string& name = test.label_names.at(std::size_t(y));
    const auto it = ids.find(name);
    if (it == ids.end()) throw InputError("test data has label '" + name + "' absent from the training data");
    y = it->second;
  }
  test.label_names = train.label_names;
  test.num_classes = train.num_classes;
}

}  // namespace

template <std::floating_point Real>
LoadedData<Real> load_data(const DataConfig& cfg, const Normalization<Real>* fixed) {
  LoadedData<Real> out;
  switch (cfg.source) {
    case DataSource::synthetic: {
      out.train = gen_synthetic<Real>(cfg.synthetic);
      if (cfg.test_n_per_class > 0) {
        SyntheticSpec t = cfg.synthetic;
        t.n_per_class = cfg.test_n_per_class;
        t.seed = cfg.synthetic.seed + 1;
        out.test = gen_synthetic<Real>(t);
      }
      break;
    }
    case DataSource::idx:
      out.train = load_idx<Real>(cfg.train_images, cfg.train_labels);
      if (!cfg.test_images.empty()) out.test = load_idx<Real>(cfg.test_images, cfg.test_labels);
      break;
    case DataSource::csv:
      out.train = load_csv<Real>(cfg.train_csv, cfg.label_column);
      if (!cfg.test_csv.empty()) {
        out.test = load_csv<Real>(cfg.test_csv, cfg.label_column);
        align_labels(out.train, *out.test);
      }
      break;
  }
  if (out.test && out.test->sample_shape() != out.train.sample_shape())
    throw InputError("test samples have shape " + shape_str(out.test->sample_shape()) +
                     ", training samples " + shape_str(out.train.sample_shape()));

  Normalization<Real> norm;
  if (fixed)
    norm = *fixed;
  else if (cfg.standardize)
    norm = fit_standardization(out.train);
  if (!norm.empty()) {
    apply_normalization(out.train, norm);
    if (out.test) apply_normalization(*out.test, norm);
  }
  return out;
}

template <std::floating_point Real>
void bind_model_to_data(RunConfig& cfg, const Dataset<Real>& train) {
  const Shape sample = train.sample_shape();
  if (cfg.model.input_shape.empty()) {
    cfg.model.input_shape = sample;
  } else if (shape_numel(cfg.model.input_shape) != shape_numel(sample)) {
    throw ConfigError("config: 'model.input_shape' " + shape_str(cfg.model.input_shape) +
                      " does not match data samples " + shape_str(sample));
  }
  if (cfg.model.num_classes() != train.num_classes) {
    throw ConfigError("config: last layer has " + std::to_string(cfg.model.num_classes()) +
                      " units but the data has " + std::to_string(train.num_classes) + " classes");
  }
}

template LoadedData<float> load_data(const DataConfig&, const Normalization<float>*);
template LoadedData<double> load_data(const DataConfig&, const Normalization<double>*);
template void bind_model_to_data(RunConfig&, const Dataset<float>&);
template void bind_model_to_data(RunConfig&, const Dataset<double>&);

}  // namespace pdqat::app

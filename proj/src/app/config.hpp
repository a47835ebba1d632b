// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pdqat/data.hpp"
#include "pdqat/errors.hpp"
#include "pdqat/pdqat.hpp"
#include "pdqat/shadow_model.hpp"

namespace pdqat::app {

/// Malformed or inconsistent run configuration.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

enum class Precision { f32, f64 };

enum class DataSource { synthetic, idx, csv };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  SyntheticSpec synthetic;
  /// Per-class test samples for synthetic data; 0 means no test set. The
  /// test set is drawn with seed + 1.
  std::size_t test_n_per_class = 0;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::filesystem::path train_csv, test_csv;
  std::string label_column = "label";
  bool standardize = true;
};

struct RunConfig {
  ModelSpec model;  // input_shape may be empty until data is loaded
  std::vector<int> bits;
  TrainRunConfig train;
  Precision precision = Precision::f32;
  DataConfig data;
  std::filesystem::path output_dir = "pdqat_out";
  /// Verbatim file contents, echoed into checkpoints.
  std::string source_text;
};

/// Parses YAML text. Relative data paths resolve against `base_dir`.
/// Unknown keys, wrong types and inconsistent values throw ConfigError.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

/// Reads and parses a config file; a missing file throws ConfigError
/// naming the path.
RunConfig load_config(const std::filesystem::path& path);

/// Output directory after applying the PDQAT_OUTPUT_DIR override.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

template <std::floating_point Real>
struct LoadedData {
  Dataset<Real> train;
  std::optional<Dataset<Real>> test;
};

/// Loads the configured source. Standardization is fitted on the training
/// split unless `fixed` is given, in which case it is applied as is.
template <std::floating_point Real>
LoadedData<Real> load_data(const DataConfig& cfg, const Normalization<Real>* fixed = nullptr);

/// Fills the model's input shape from the data and checks the class count.
template <std::floating_point Real>
void bind_model_to_data(RunConfig& cfg, const Dataset<Real>& train);

}  // namespace pdqat::app

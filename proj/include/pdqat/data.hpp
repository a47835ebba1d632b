// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdqat/tensor.hpp"

namespace pdqat {

/// Per-feature affine standardization: x' = (x - mean) / scale.
template <std::floating_point Real>
struct Normalization {
  std::vector<Real> mean;
  std::vector<Real> scale;
  bool empty() const { return mean.empty(); }
};

/// Features [N x ...] with dense integer labels in [0, K).
template <std::floating_point Real>
struct Dataset {
  Tensor<Real> features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  /// Original label strings in dense-id order (CSV sources); empty otherwise.
  std::vector<std::string> label_names;
  Normalization<Real> normalization;

  std::size_t size() const { return labels.size(); }
  /// Shape of one sample (features shape without the leading N).
  Shape sample_shape() const;
  /// Throws InputError when empty or labels fall outside [0, K).
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Big-endian IDX pair (images magic 0x00000803, labels magic 0x00000801).
/// Pixels are scaled to [0, 1]; features have shape [N x 1 x rows x cols].
template <std::floating_point Real>
Dataset<Real> load_idx(const std::filesystem::path& images,
                       const std::filesystem::path& labels);

/// Numeric CSV with a header row. Labels in `label_column` may be any
/// string and are densified to 0..K-1 by first appearance.
template <std::floating_point Real>
Dataset<Real> load_csv(const std::filesystem::path& path, std::string_view label_column);

enum class SyntheticKind { blobs, spirals };

SyntheticKind synthetic_kind_from_string(std::string_view s);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::blobs;
  std::size_t n_per_class = 100;
  std::size_t classes = 2;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// 2-D toy problems. Blobs: isotropic Gaussians (std = noise) centered on a
/// radius-2 circle, so two classes sit 4 noise-units apart when noise = 1.
/// Spirals: interleaved arms with radial noise.
template <std::floating_point Real>
Dataset<Real> gen_synthetic(const SyntheticSpec& spec);

template <std::floating_point Real>
Normalization<Real> fit_standardization(const Dataset<Real>& train);

template <std::floating_point Real>
void apply_normalization(Dataset<Real>& data, const Normalization<Real>& norm);

/// Seeded split into (kept, held_out) with round(fraction * N) held out.
template <std::floating_point Real>
std::pair<Dataset<Real>, Dataset<Real>> split_dataset(const Dataset<Real>& data,
                                                      double fraction, std::uint64_t seed);

template <std::floating_point Real>
struct Batch {
  Tensor<Real> features;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
  std::size_t size() const { return labels.size(); }
};

/// Minibatches over a (possibly shuffled) permutation of the dataset. The
/// final partial batch is kept, so there are ceil(N / batch_size) batches.
template <std::floating_point Real>
class BatchSequence {
 public:
  BatchSequence(const Dataset<Real>& data, std::size_t batch_size,
                std::optional<std::uint64_t> shuffle_seed);

  std::size_t size() const { return num_batches_; }
  Batch<Real> operator[](std::size_t i) const;
  const std::vector<std::size_t>& order() const { return order_; }

 private:
  const Dataset<Real>* data_;
  std::size_t batch_size_;
  std::size_t num_batches_;
  std::vector<std::size_t> order_;
};

template <std::floating_point Real>
BatchSequence<Real> batch_iter(const Dataset<Real>& data, std::size_t batch_size,
                               std::optional<std::uint64_t> shuffle_seed) {
  return BatchSequence<Real>(data, batch_size, shuffle_seed);
}

}  // namespace pdqat

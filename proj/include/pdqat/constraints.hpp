// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "pdqat/shadow_model.hpp"
#include "pdqat/tensor.hpp"

namespace pdqat {

/// How the layerwise squared error is normalized.
enum class MseNorm {
  per_element,    // mean over batch and elements
  per_sample_l2,  // mean over batch of the squared L2 norm
};

std::string_view to_string(MseNorm n);
MseNorm mse_norm_from_string(std::string_view s);

/// Bounds for the L - 1 layerwise constraints and the output constraint.
struct ConstraintSet {
  std::vector<double> eps_layer;
  double eps_out = 0.2;
  MseNorm mse_norm = MseNorm::per_element;
  double log_clamp = 1e-12;

  /// Throws InputError on negative or non-finite bounds, a non-positive
  /// clamp, or a bound count different from `constraints`.
  void validate(std::size_t constraints) const;

  /// eps_l = default_epsilon(k_l) for quantized layers, default_epsilon of
  /// the widest enabled bitwidth (or `fallback_bits`) for high-precision
  /// ones.
  static ConstraintSet defaults_for(const QuantSpec& quant, double eps_out,
                                    int fallback_bits = 8);
};

/// 1 / (2^k - 1). Throws InputError for k outside [1, kMaxBits].
double default_epsilon(int bits);

/// Squared-error distance between the hybrid output f_l(z^q_{l-1}) and the
/// quantized output f^q_l(z^q_{l-1}).
template <std::floating_point Real>
double layer_distance(const Tensor<Real>& hybrid, const Tensor<Real>& quant,
                      MseNorm norm = MseNorm::per_element);

/// scale * d layer_distance / d hybrid.
template <std::floating_point Real>
Tensor<Real> layer_distance_grad(const Tensor<Real>& hybrid, const Tensor<Real>& quant,
                                 MseNorm norm, double scale);

/// Batch mean of -sum_i p_full_i log(max(p_quant_i, clamp)). Rows of both
/// arguments must sum to 1 within 1e-4 (ContractError otherwise).
template <std::floating_point Real>
double output_distance(const Tensor<Real>& p_full, const Tensor<Real>& p_quant,
                       double clamp = 1e-12);

/// scale * d output_distance / d logits, where p_full = softmax(logits).
template <std::floating_point Real>
Tensor<Real> output_distance_logit_grad(const Tensor<Real>& p_full, const Tensor<Real>& p_quant,
                                        double clamp, double scale);

/// Batch-mean distances of one forward trace.
struct TraceDistances {
  std::vector<double> layer;  // d_1 .. d_{L-1}
  double out = 0.0;
};

template <std::floating_point Real>
TraceDistances trace_distances(const DualForwardTrace<Real>& trace, const ConstraintSet& cs);

struct SlackReport {
  std::vector<double> layer_distance;
  std::vector<double> layer_eps;
  std::vector<double> layer_slack;
  double out_distance = 0.0;
  double out_eps = 0.0;
  double out_slack = 0.0;
  std::size_t samples = 0;
};

/// Sample-weighted running sums of per-batch distances.
class DistanceAccumulator {
 public:
  explicit DistanceAccumulator(std::size_t constraints) : layer_sum_(constraints, 0.0) {}

  void add(const TraceDistances& d, std::size_t batch_size);
  std::size_t samples() const { return samples_; }
  std::vector<double> mean_layer() const;
  double mean_out() const;

 private:
  std::vector<double> layer_sum_;
  double out_sum_ = 0.0;
  std::size_t samples_ = 0;
};

/// s = mean distance - eps per constraint. Throws InputError when nothing
/// was accumulated.
SlackReport compute_slacks(const DistanceAccumulator& acc, const ConstraintSet& cs);

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pdqat/tensor.hpp"

// Fixed-point quantizers for simulated low-precision training.
//
// Weights go through a tanh normalization onto [0, 1] before rounding and are
// mapped back to [-1, 1]; activations are clipped to [0, 1] and rounded. The
// rounding grid for k bits is {i / (2^k - 1) : i = 0 .. 2^k - 1} and ties
// round half away from zero (std::round), so results are bit-reproducible.

namespace pdqat {

inline constexpr int kMaxBits = 32;

/// 2^k - 1 as a double (exact for every supported k).
double grid_levels(int bits);

struct QuantEntry {
  bool enabled = false;
  int bits = 0;

  friend bool operator==(const QuantEntry&, const QuantEntry&) = default;
};

/// Per-layer bitwidths. A disabled layer runs at full precision in both the
/// full and quantized models.
class QuantSpec {
 public:
  QuantSpec() = default;

  /// Every layer at `bits`, except the first and last layers which stay in
  /// high precision when `keep_ends_high` is set.
  static QuantSpec uniform(std::size_t layers, int bits, bool keep_ends_high = true);

  /// One entry per layer, 0 meaning high precision.
  static QuantSpec from_bits(std::span<const int> bits);

  std::size_t size() const noexcept { return layers_.size(); }
  const QuantEntry& operator[](std::size_t layer) const { return layers_.at(layer); }
  const std::vector<QuantEntry>& entries() const noexcept { return layers_; }

  /// Throws InputError for an unknown layer or for enabled with k outside
  /// [1, kMaxBits].
  void set(std::size_t layer, bool enabled, int bits);

  std::vector<int> to_bits() const;
  bool any_enabled() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;

 private:
  std::vector<QuantEntry> layers_;
};

/// round(z * (2^k - 1)) / (2^k - 1) for z in [0, 1]. Throws ContractError
/// for z outside [0, 1] (callers clip first) or k outside [1, kMaxBits].
template <std::floating_point Real>
Real fixed_point_round(Real z, int bits);

/// 2 r(1/2 + tanh(w) / (2 max|tanh(w)|)) - 1 with the max taken over the
/// whole tensor. An all-zero tensor maps to zeros.
template <std::floating_point Real>
Tensor<Real> quantize_weights(const Tensor<Real>& w, int bits);

/// r(clip(a, 0, 1)), elementwise.
template <std::floating_point Real>
Tensor<Real> quantize_activations(const Tensor<Real>& a, int bits);

/// Straight-through estimator for the activation quantizer: passes grad_out
/// where the pre-quantization input lies in [0, 1], zero elsewhere. Only the
/// baseline trainer uses it.
template <std::floating_point Real>
Tensor<Real> ste_backward(const Tensor<Real>& grad_out, const Tensor<Real>& pre_quant_input);

/// Straight-through estimator for the weight quantizer: the round stage is
/// treated as identity, leaving d/dw [tanh(w) / max|tanh(w)|] with the max
/// held constant.
template <std::floating_point Real>
Tensor<Real> ste_weight_backward(const Tensor<Real>& grad_out, const Tensor<Real>& w);

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace pdqat {

namespace {

void check_bits(int bits) {
  if (bits < 1 || bits > kMaxBits) {
    throw ContractError("bitwidth " + std::to_string(bits) + " outside [1, " +
                        std::to_string(kMaxBits) + "]");
  }
}

}  // namespace

double grid_levels(int bits) {
  check_bits(bits);
  return static_cast<double>((std::uint64_t{1} << bits) - 1);
}

QuantSpec QuantSpec::uniform(std::size_t layers, int bits, bool keep_ends_high) {
  QuantSpec spec;
  spec.layers_.resize(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    const bool end = i == 0 || i + 1 == layers;
    spec.set(i, !(keep_ends_high && end), bits);
  }
  return spec;
}

QuantSpec QuantSpec::from_bits(std::span<const int> bits) {
  QuantSpec spec;
  spec.layers_.resize(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] < 0) throw InputError("negative bitwidth for layer " + std::to_string(i + 1));
    spec.set(i, bits[i] > 0, bits[i]);
  }
  return spec;
}

void QuantSpec::set(std::size_t layer, bool enabled, int bits) {
  if (layer >= layers_.size()) {
    throw InputError("unknown layer id " + std::to_string(layer) + " (model has " +
                     std::to_string(layers_.size()) + " layers)");
  }
  if (enabled && (bits < 1 || bits > kMaxBits)) {
    throw InputError("layer " + std::to_string(layer) + ": bitwidth " +
                     std::to_string(bits) + " outside [1, " + std::to_string(kMaxBits) + "]");
  }
  layers_[layer] = QuantEntry{enabled, enabled ? bits : 0};
}

std::vector<int> QuantSpec::to_bits() const {
  std::vector<int> out;
  out.reserve(layers_.size());
  for (const auto& e : layers_) out.push_back(e.enabled ? e.bits : 0);
  return out;
}

bool QuantSpec::any_enabled() const {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const QuantEntry& e) { return e.enabled; });
}

template <std::floating_point Real>
Real fixed_point_round(Real z, int bits) {
  check_bits(bits);
  if (!(z >= Real(0) && z <= Real(1))) {
    throw ContractError("fixed_point_round: input " + std::to_string(z) +
                        " outside [0, 1]");
  }
  const auto n = static_cast<Real>(grid_levels(bits));
  return std::round(z * n) / n;
}

template <std::floating_point Real>
Tensor<Real> quantize_weights(const Tensor<Real>& w, int bits) {
  check_bits(bits);
  Tensor<Real> t(w.shape());
  Real max_abs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    t[i] = std::tanh(w[i]);
    max_abs = std::max(max_abs, std::abs(t[i]));
  }
  Tensor<Real> out(w.shape());
  if (max_abs == Real(0)) return out;
  const Real denom = Real(2) * max_abs;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Real unit = std::clamp(Real(0.5) + t[i] / denom, Real(0), Real(1));
    out[i] = std::isnan(unit) ? unit : Real(2) * fixed_point_round(unit, bits) - Real(1);
  }
  return out;
}

template <std::floating_point Real>
Tensor<Real> quantize_activations(const Tensor<Real>& a, int bits) {
  check_bits(bits);
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i] = std::isnan(a[i]) ? a[i] : fixed_point_round(std::clamp(a[i], Real(0), Real(1)), bits);
  return out;
}

template <std::floating_point Real>
Tensor<Real> ste_backward(const Tensor<Real>& grad_out, const Tensor<Real>& pre_quant_input) {
  if (grad_out.shape() != pre_quant_input.shape())
    throw DimensionError("ste_backward: gradient and input shapes differ");
  Tensor<Real> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Real x = pre_quant_input[i];
    g[i] = (x >= Real(0) && x <= Real(1)) ? grad_out[i] : Real(0);
  }
  return g;
}

template <std::floating_point Real>
Tensor<Real> ste_weight_backward(const Tensor<Real>& grad_out, const Tensor<Real>& w) {
  if (grad_out.shape() != w.shape())
    throw DimensionError("ste_weight_backward: gradient and weight shapes differ");
  Real max_abs = 0;
  for (std::size_t i = 0; i < w.size(); ++i) max_abs = std::max(max_abs, std::abs(std::tanh(w[i])));
  Tensor<Real> g(w.shape());
  if (max_abs == Real(0)) return g;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Real t = std::tanh(w[i]);
    g[i] = grad_out[i] * (Real(1) - t * t) / max_abs;
  }
  return g;
}

#define PDQAT_INSTANTIATE(Real)                                                   \
  template Real fixed_point_round(Real, int);                                     \
  template Tensor<Real> quantize_weights(const Tensor<Real>&, int);               \
  template Tensor<Real> quantize_activations(const Tensor<Real>&, int);           \
  template Tensor<Real> ste_backward(const Tensor<Real>&, const Tensor<Real>&);   \
  template Tensor<Real> ste_weight_backward(const Tensor<Real>&, const Tensor<Real>&);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "pdqat/kernels.hpp"
#include "pdqat/tensor.hpp"

// Layer engine with explicit forward/backward passes.
//
// Layers are free functions over explicit tensors plus a cache object, so the
// same weights can be run through several independent passes (full
// precision, quantized, hybrid) without the passes clobbering each other's
// caches. Backward functions *accumulate* parameter gradients (`+=`) and
// return the input gradient.

namespace pdqat {

template <std::floating_point Real>
struct Param {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  Tensor<Real> m;  // first moment
  Tensor<Real> v;  // second moment
};

/// Named parameters of one layer with gradient and optimizer buffers of
/// matching shape.
template <std::floating_point Real>
class LayerParams {
 public:
  Param<Real>& add(std::string name, Tensor<Real> value);
  Param<Real>& get(std::string_view name);
  const Param<Real>& get(std::string_view name) const;
  bool has(std::string_view name) const;

  std::vector<Param<Real>>& all() noexcept { return params_; }
  const std::vector<Param<Real>>& all() const noexcept { return params_; }

  void zero_grad();

 private:
  std::vector<Param<Real>> params_;
};

// ---------------------------------------------------------------- dense

template <std::floating_point Real>
struct DenseCache {
  Tensor<Real> input;
  bool valid() const { return !input.empty(); }
};

/// output[B x m] = input[B x n] . weight[n x m] + bias. Inputs of rank > 2
/// are flattened per sample.
template <std::floating_point Real>
Tensor<Real> dense_forward(const Tensor<Real>& input, const Tensor<Real>& weight,
                           const Tensor<Real>* bias, DenseCache<Real>* cache = nullptr,
                           std::string_view layer = "dense");

template <std::floating_point Real>
Tensor<Real> dense_backward(const Tensor<Real>& grad_out, const DenseCache<Real>& cache,
                            const Tensor<Real>& weight, Tensor<Real>* grad_weight,
                            Tensor<Real>* grad_bias, std::string_view layer = "dense");

/// Convenience overloads over a LayerParams holding "weight" and optionally
/// "bias".
template <std::floating_point Real>
Tensor<Real> dense_forward(const Tensor<Real>& input, const LayerParams<Real>& params,
                           DenseCache<Real>* cache = nullptr,
                           std::string_view layer = "dense");

template <std::floating_point Real>
Tensor<Real> dense_backward(const Tensor<Real>& grad_out, const DenseCache<Real>& cache,
                            LayerParams<Real>& params, std::string_view layer = "dense");

// ---------------------------------------------------------------- conv2d

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <std::floating_point Real>
struct Conv2dCache {
  Tensor<Real> input;
  kernels::ConvDims dims;
  bool valid() const { return !input.empty(); }
};

/// Cross-correlation of input[B x C x H x W] with weight[Co x C x kH x kW].
template <std::floating_point Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& input, const Tensor<Real>& weight,
                            const Tensor<Real>* bias, Conv2dGeometry geometry,
                            Conv2dCache<Real>* cache = nullptr,
                            std::string_view layer = "conv2d");

template <std::floating_point Real>
Tensor<Real> conv2d_backward(const Tensor<Real>& grad_out, const Conv2dCache<Real>& cache,
                             const Tensor<Real>& weight, Tensor<Real>* grad_weight,
                             Tensor<Real>* grad_bias, std::string_view layer = "conv2d");

/// Spatial output size of a convolution; throws DimensionError when the
/// kernel does not fit the padded input.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, std::string_view layer);

// ---------------------------------------------------------------- batch norm

template <std::floating_point Real>
struct BatchNormState {
  Tensor<Real> running_mean;
  Tensor<Real> running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);
  bool training = true;

  static BatchNormState make(std::size_t channels) {
    BatchNormState s;
    s.running_mean = Tensor<Real>({channels}, Real(0));
    s.running_var = Tensor<Real>({channels}, Real(1));
    return s;
  }
  std::size_t channels() const { return running_mean.size(); }
};

template <std::floating_point Real>
struct BatchNormCache {
  Tensor<Real> xhat;
  std::vector<Real> inv_std;
  bool batch_stats = false;
  bool valid() const { return !xhat.empty(); }
};

/// Per-channel normalization over axis 1 of a [B x C] or [B x C x H x W]
/// input. In training mode batch statistics are used and, when
/// `update_running` is set, folded into the running estimates; in eval mode
/// the running estimates are used.
template <std::floating_point Real>
Tensor<Real> batchnorm_forward(const Tensor<Real>& input, BatchNormState<Real>& state,
                               const Tensor<Real>& gamma, const Tensor<Real>& beta,
                               BatchNormCache<Real>* cache = nullptr,
                               bool update_running = true);

template <std::floating_point Real>
Tensor<Real> batchnorm_backward(const Tensor<Real>& grad_out,
                                const BatchNormCache<Real>& cache,
                                const Tensor<Real>& gamma, Tensor<Real>* grad_gamma,
                                Tensor<Real>* grad_beta);

// ---------------------------------------------------------------- activations

enum class Activation { none, relu, clip };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// relu: max(0, x). clip: min(1, max(0, x)), the domain of the activation
/// quantizer.
template <std::floating_point Real>
Tensor<Real> activation_forward(const Tensor<Real>& pre, Activation act);

template <std::floating_point Real>
Tensor<Real> activation_backward(const Tensor<Real>& grad_out, const Tensor<Real>& pre,
                                 Activation act);

}  // namespace pdqat

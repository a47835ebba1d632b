// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pdqat {

namespace {

std::string named(std::string_view layer, const std::string& msg) {
  return std::string(layer) + ": " + msg;
}

template <std::floating_point Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b,
                        std::string_view layer, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(named(layer, std::string(what) + " shape " + shape_str(a.shape()) +
                                          " != " + shape_str(b.shape())));
  }
}

}  // namespace

// ---------------------------------------------------------------- params

template <std::floating_point Real>
Param<Real>& LayerParams<Real>::add(std::string name, Tensor<Real> value) {
  if (has(name)) throw InputError("duplicate parameter '" + name + "'");
  Param<Real> p;
  p.name = std::move(name);
  p.grad = Tensor<Real>::zeros_like(value);
  p.m = Tensor<Real>::zeros_like(value);
  p.v = Tensor<Real>::zeros_like(value);
  p.value = std::move(value);
  params_.push_back(std::move(p));
  return params_.back();
}

template <std::floating_point Real>
Param<Real>& LayerParams<Real>::get(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw InputError("no parameter named '" + std::string(name) + "'");
}

template <std::floating_point Real>
const Param<Real>& LayerParams<Real>::get(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw InputError("no parameter named '" + std::string(name) + "'");
}

template <std::floating_point Real>
bool LayerParams<Real>::has(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Param<Real>& p) { return p.name == name; });
}

template <std::floating_point Real>
void LayerParams<Real>::zero_grad() {
  for (auto& p : params_) p.grad.fill(Real(0));
}

// ---------------------------------------------------------------- dense

template <std::floating_point Real>
Tensor<Real> dense_forward(const Tensor<Real>& input, const Tensor<Real>& weight,
                           const Tensor<Real>* bias, DenseCache<Real>* cache,
                           std::string_view layer) {
  if (input.empty()) throw DimensionError(named(layer, "empty input"));
  if (weight.rank() != 2) throw DimensionError(named(layer, "weight must be rank 2"));
  const std::size_t batch = input.rows();
  const std::size_t n = input.row_size();
  const std::size_t m = weight.dim(1);
  if (weight.dim(0) != n) {
    throw DimensionError(named(layer, "input width " + std::to_string(n) +
                                          " does not match weight " +
                                          shape_str(weight.shape())));
  }
  if (bias && (bias->size() != m)) {
    throw DimensionError(named(layer, "bias length " + std::to_string(bias->size()) +
                                          " != output width " + std::to_string(m)));
  }
  Tensor<Real> out({batch, m});
  kernels::parallel::gemm_nn<Real>(input.data(), weight.data(), out.data(), batch, n, m);
  if (bias) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < m; ++j) out[b * m + j] += (*bias)[j];
  }
  if (cache) cache->input = input;
  return out;
}

template <std::floating_point Real>
Tensor<Real> dense_backward(const Tensor<Real>& grad_out, const DenseCache<Real>& cache,
                            const Tensor<Real>& weight, Tensor<Real>* grad_weight,
                            Tensor<Real>* grad_bias, std::string_view layer) {
  if (!cache.valid()) throw StateError(named(layer, "backward called without a forward cache"));
  const std::size_t batch = cache.input.rows();
  const std::size_t n = cache.input.row_size();
  const std::size_t m = weight.dim(1);
  if (grad_out.rows() != batch || grad_out.row_size() != m) {
    throw DimensionError(named(layer, "grad_out shape " + shape_str(grad_out.shape()) +
                                          " does not match forward output"));
  }
  Tensor<Real> grad_in(cache.input.shape());
  kernels::parallel::gemm_nt<Real>(grad_out.data(), weight.data(), grad_in.data(), batch, m, n);
  if (grad_weight) {
    Tensor<Real> gw({n, m});
    kernels::parallel::gemm_tn<Real>(cache.input.data(), grad_out.data(), gw.data(), n, batch, m);
    for (std::size_t i = 0; i < gw.size(); ++i) (*grad_weight)[i] += gw[i];
  }
  if (grad_bias) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < m; ++j) (*grad_bias)[j] += grad_out[b * m + j];
  }
  return grad_in;
}

template <std::floating_point Real>
Tensor<Real> dense_forward(const Tensor<Real>& input, const LayerParams<Real>& params,
                           DenseCache<Real>* cache, std::string_view layer) {
  const Tensor<Real>* bias = params.has("bias") ? &params.get("bias").value : nullptr;
  return dense_forward(input, params.get("weight").value, bias, cache, layer);
}

template <std::floating_point Real>
Tensor<Real> dense_backward(const Tensor<Real>& grad_out, const DenseCache<Real>& cache,
                            LayerParams<Real>& params, std::string_view layer) {
  auto& w = params.get("weight");
  Tensor<Real>* gb = params.has("bias") ? &params.get("bias").grad : nullptr;
  return dense_backward(grad_out, cache, w.value, &w.grad, gb, layer);
}

// ---------------------------------------------------------------- conv2d

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, std::string_view layer) {
  if (stride == 0) throw DimensionError(named(layer, "stride must be positive"));
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || kernel > padded) {
    throw DimensionError(named(layer, "kernel " + std::to_string(kernel) +
                                          " does not fit padded input " +
                                          std::to_string(padded)));
  }
  return (padded - kernel) / stride + 1;
}

template <std::floating_point Real>
Tensor<Real> conv2d_forward(const Tensor<Real>& input, const Tensor<Real>& weight,
                            const Tensor<Real>* bias, Conv2dGeometry geometry,
                            Conv2dCache<Real>* cache, std::string_view layer) {
  if (input.rank() != 4) throw DimensionError(named(layer, "input must be B x C x H x W"));
  if (weight.rank() != 4) throw DimensionError(named(layer, "weight must be Co x C x kH x kW"));
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError(named(layer, "input channels " + std::to_string(input.dim(1)) +
                                          " != weight channels " +
                                          std::to_string(weight.dim(1))));
  }
  kernels::ConvDims d;
  d.batch = input.dim(0);
  d.in_channels = input.dim(1);
  d.in_h = input.dim(2);
  d.in_w = input.dim(3);
  d.out_channels = weight.dim(0);
  d.kernel_h = weight.dim(2);
  d.kernel_w = weight.dim(3);
  d.stride = geometry.stride;
  d.padding = geometry.padding;
  d.out_h = conv_output_size(d.in_h, d.kernel_h, d.stride, d.padding, layer);
  d.out_w = conv_output_size(d.in_w, d.kernel_w, d.stride, d.padding, layer);
  if (bias && bias->size() != d.out_channels)
    throw DimensionError(named(layer, "bias length does not match output channels"));

  Tensor<Real> out({d.batch, d.out_channels, d.out_h, d.out_w});
  kernels::parallel::conv2d_forward<Real>(input.data(), weight.data(), out.data(), d);
  if (bias) {
    const std::size_t plane = d.out_h * d.out_w;
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t c = 0; c < d.out_channels; ++c)
        for (std::size_t i = 0; i < plane; ++i)
          out[(b * d.out_channels + c) * plane + i] += (*bias)[c];
  }
  if (cache) {
    cache->input = input;
    cache->dims = d;
  }
  return out;
}

template <std::floating_point Real>
Tensor<Real> conv2d_backward(const Tensor<Real>& grad_out, const Conv2dCache<Real>& cache,
                             const Tensor<Real>& weight, Tensor<Real>* grad_weight,
                             Tensor<Real>* grad_bias, std::string_view layer) {
  if (!cache.valid()) throw StateError(named(layer, "backward called without a forward cache"));
  const auto& d = cache.dims;
  const Shape expected{d.batch, d.out_channels, d.out_h, d.out_w};
  if (grad_out.shape() != expected) {
    throw DimensionError(named(layer, "grad_out shape " + shape_str(grad_out.shape()) +
                                          " != " + shape_str(expected)));
  }
  Tensor<Real> grad_in(cache.input.shape());
  kernels::parallel::conv2d_backward_input<Real>(grad_out.data(), weight.data(),
                                                 grad_in.data(), d);
  if (grad_weight) {
    Tensor<Real> gw(weight.shape());
    kernels::parallel::conv2d_backward_weight<Real>(grad_out.data(), cache.input.data(),
                                                    gw.data(), d);
    for (std::size_t i = 0; i < gw.size(); ++i) (*grad_weight)[i] += gw[i];
  }
  if (grad_bias) {
    const std::size_t plane = d.out_h * d.out_w;
    for (std::size_t b = 0; b < d.batch; ++b)
      for (std::size_t c = 0; c < d.out_channels; ++c)
        for (std::size_t i = 0; i < plane; ++i)
          (*grad_bias)[c] += grad_out[(b * d.out_channels + c) * plane + i];
  }
  return grad_in;
}

// ---------------------------------------------------------------- batch norm

template <std::floating_point Real>
Tensor<Real> batchnorm_forward(const Tensor<Real>& input, BatchNormState<Real>& state,
                               const Tensor<Real>& gamma, const Tensor<Real>& beta,
                               BatchNormCache<Real>* cache, bool update_running) {
  if (input.rank() != 2 && input.rank() != 4)
    throw DimensionError("batchnorm: input must be rank 2 or 4, got " + shape_str(input.shape()));
  const std::size_t batch = input.dim(0);
  const std::size_t channels = input.dim(1);
  if (channels != state.channels() || gamma.size() != channels || beta.size() != channels) {
    throw DimensionError("batchnorm: channel count " + std::to_string(channels) +
                         " does not match state/affine size " +
                         std::to_string(state.channels()));
  }
  const std::size_t spatial = input.size() / (batch * channels);
  const std::size_t count = batch * spatial;

  std::vector<Real> mean(channels), inv_std(channels);
  if (state.training) {
    for (std::size_t c = 0; c < channels; ++c) {
      Real sum = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s) sum += input[(b * channels + c) * spatial + s];
      const Real mu = sum / Real(count);
      Real sq = 0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const Real dv = input[(b * channels + c) * spatial + s] - mu;
          sq += dv * dv;
        }
      const Real var = sq / Real(count);
      mean[c] = mu;
      inv_std[c] = Real(1) / std::sqrt(var + state.eps);
      if (update_running) {
        const Real unbiased = count > 1 ? var * Real(count) / Real(count - 1) : var;
        state.running_mean[c] = (Real(1) - state.momentum) * state.running_mean[c] +
                                state.momentum * mu;
        state.running_var[c] = (Real(1) - state.momentum) * state.running_var[c] +
                               state.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = Real(1) / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  Tensor<Real> xhat(input.shape());
  Tensor<Real> out(input.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = (b * channels + c) * spatial + s;
        xhat[i] = (input[i] - mean[c]) * inv_std[c];
        out[i] = gamma[c] * xhat[i] + beta[c];
      }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_stats = state.training;
  }
  return out;
}

template <std::floating_point Real>
Tensor<Real> batchnorm_backward(const Tensor<Real>& grad_out,
                                const BatchNormCache<Real>& cache,
                                const Tensor<Real>& gamma, Tensor<Real>* grad_gamma,
                                Tensor<Real>* grad_beta) {
  if (!cache.valid()) throw StateError("batchnorm: backward called without a forward cache");
  require_same_shape(grad_out, cache.xhat, "batchnorm", "grad_out");
  const std::size_t batch = grad_out.dim(0);
  const std::size_t channels = grad_out.dim(1);
  const std::size_t spatial = grad_out.size() / (batch * channels);
  const Real count = Real(batch * spatial);

  Tensor<Real> grad_in(grad_out.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    Real sum_g = 0, sum_gx = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = (b * channels + c) * spatial + s;
        sum_g += grad_out[i];
        sum_gx += grad_out[i] * cache.xhat[i];
      }
    if (grad_gamma) (*grad_gamma)[c] += sum_gx;
    if (grad_beta) (*grad_beta)[c] += sum_g;
    const Real scale = gamma[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = (b * channels + c) * spatial + s;
        if (cache.batch_stats) {
          grad_in[i] = scale / count *
                       (count * grad_out[i] - sum_g - cache.xhat[i] * sum_gx);
        } else {
          grad_in[i] = scale * grad_out[i];
        }
      }
  }
  return grad_in;
}

// ---------------------------------------------------------------- activations

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::clip: return "clip";
  }
  return "none";
}

Activation activation_from_string(std::string_view s) {
  if (s == "none" || s == "identity") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "clip") return Activation::clip;
  throw InputError("unknown activation '" + std::string(s) + "'");
}

template <std::floating_point Real>
Tensor<Real> activation_forward(const Tensor<Real>& pre, Activation act) {
  if (act == Activation::none) return pre;
  Tensor<Real> out(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const Real x = pre[i];
    // Comparisons are ordered so that NaN passes through unchanged.
    if (x < Real(0))
      out[i] = Real(0);
    else if (act == Activation::clip && x > Real(1))
      out[i] = Real(1);
    else
      out[i] = x;
  }
  return out;
}

template <std::floating_point Real>
Tensor<Real> activation_backward(const Tensor<Real>& grad_out, const Tensor<Real>& pre,
                                 Activation act) {
  require_same_shape(grad_out, pre, to_string(act), "grad_out");
  if (act == Activation::none) return grad_out;
  Tensor<Real> g(pre.shape());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const Real x = pre[i];
    const bool pass = act == Activation::relu ? x > Real(0) : (x > Real(0) && x < Real(1));
    g[i] = pass ? grad_out[i] : Real(0);
  }
  return g;
}

#define PDQAT_INSTANTIATE(Real)                                                          \
  template class LayerParams<Real>;                                                      \
  template Tensor<Real> dense_forward(const Tensor<Real>&, const Tensor<Real>&,          \
                                      const Tensor<Real>*, DenseCache<Real>*,            \
                                      std::string_view);                                 \
  template Tensor<Real> dense_backward(const Tensor<Real>&, const DenseCache<Real>&,     \
                                       const Tensor<Real>&, Tensor<Real>*, Tensor<Real>*, \
                                       std::string_view);                                \
  template Tensor<Real> dense_forward(const Tensor<Real>&, const LayerParams<Real>&,      \
                                      DenseCache<Real>*, std::string_view);              \
  template Tensor<Real> dense_backward(const Tensor<Real>&, const DenseCache<Real>&,     \
                                       LayerParams<Real>&, std::string_view);            \
  template Tensor<Real> conv2d_forward(const Tensor<Real>&, const Tensor<Real>&,         \
                                       const Tensor<Real>*, Conv2dGeometry,              \
                                       Conv2dCache<Real>*, std::string_view);            \
  template Tensor<Real> conv2d_backward(const Tensor<Real>&, const Conv2dCache<Real>&,   \
                                        const Tensor<Real>&, Tensor<Real>*,              \
                                        Tensor<Real>*, std::string_view);                \
  template Tensor<Real> batchnorm_forward(const Tensor<Real>&, BatchNormState<Real>&,    \
                                          const Tensor<Real>&, const Tensor<Real>&,      \
                                          BatchNormCache<Real>*, bool);                  \
  template Tensor<Real> batchnorm_backward(const Tensor<Real>&,                          \
                                           const BatchNormCache<Real>&,                  \
                                           const Tensor<Real>&, Tensor<Real>*,           \
                                           Tensor<Real>*);                               \
  template Tensor<Real> activation_forward(const Tensor<Real>&, Activation);             \
  template Tensor<Real> activation_backward(const Tensor<Real>&, const Tensor<Real>&,    \
                                            Activation);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)

}  // namespace pdqat

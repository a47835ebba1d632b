// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>

// Dense and convolution kernels behind the layer engine.
//
// Two implementations share every signature: `serial` is the plain loop
// reference kept for testing, `parallel` distributes independent output
// elements over OpenMP threads. Each output element is accumulated by one
// thread in the same order as the reference, so both produce bit-identical
// results for any thread count. All kernels overwrite their output.

namespace pdqat::kernels {

struct ConvDims {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

#define PDQAT_DECLARE_KERNELS                                                     \
  /* c[m x n] = a[m x k] * b[k x n] */                                            \
  template <typename Real>                                                        \
  void gemm_nn(std::span<const Real> a, std::span<const Real> b,                  \
               std::span<Real> c, std::size_t m, std::size_t k, std::size_t n);   \
  /* c[m x n] = a[m x k] * b[n x k]^T */                                          \
  template <typename Real>                                                        \
  void gemm_nt(std::span<const Real> a, std::span<const Real> b,                  \
               std::span<Real> c, std::size_t m, std::size_t k, std::size_t n);   \
  /* c[m x n] = a[k x m]^T * b[k x n] */                                          \
  template <typename Real>                                                        \
  void gemm_tn(std::span<const Real> a, std::span<const Real> b,                  \
               std::span<Real> c, std::size_t m, std::size_t k, std::size_t n);   \
  template <typename Real>                                                        \
  void conv2d_forward(std::span<const Real> input, std::span<const Real> weight,  \
                      std::span<Real> output, const ConvDims& d);                 \
  template <typename Real>                                                        \
  void conv2d_backward_input(std::span<const Real> grad_out,                      \
                             std::span<const Real> weight,                        \
                             std::span<Real> grad_in, const ConvDims& d);         \
  template <typename Real>                                                        \
  void conv2d_backward_weight(std::span<const Real> grad_out,                     \
                              std::span<const Real> input,                        \
                              std::span<Real> grad_weight, const ConvDims& d);

namespace serial {
PDQAT_DECLARE_KERNELS
}  // namespace serial

namespace parallel {
PDQAT_DECLARE_KERNELS
}  // namespace parallel

#undef PDQAT_DECLARE_KERNELS

/// Number of threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace pdqat::kernels

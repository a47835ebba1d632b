// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pdqat::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {
// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

// Row-parallel i-p-j order. Each c[i][j] still sums p = 0..k-1 in sequence,
// matching serial::gemm_nn bit for bit.
template <typename Real>
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool big = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c.data() + i * n;
    std::fill(crow, crow + n, Real(0));
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a[i * k + p];
      const Real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename Real>
void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool big = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b.data() + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  const bool big = m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c.data() + i * n;
    std::fill(crow, crow + n, Real(0));
    for (std::size_t p = 0; p < k; ++p) {
      const Real api = a[p * m + i];
      const Real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template <typename Real>
void conv2d_forward(std::span<const Real> input, std::span<const Real> weight,
                    std::span<Real> output, const ConvDims& d) {
  const bool big = d.batch * d.out_channels * d.out_h * d.out_w * d.in_channels *
                       d.kernel_h * d.kernel_w >= kParallelWork;
  const auto ih = static_cast<std::ptrdiff_t>(d.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(d.in_w);
  const auto pad = static_cast<std::ptrdiff_t>(d.padding);
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t co = 0; co < d.out_channels; ++co) {
      const Real* wbase = weight.data() + co * d.in_channels * d.kernel_h * d.kernel_w;
      Real* obase = output.data() + (b * d.out_channels + co) * d.out_h * d.out_w;
      for (std::size_t oy = 0; oy < d.out_h; ++oy) {
        for (std::size_t ox = 0; ox < d.out_w; ++ox) {
          Real acc = 0;
          for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
            const Real* ibase = input.data() + (b * d.in_channels + ci) * d.in_h * d.in_w;
            const Real* wk = wbase + ci * d.kernel_h * d.kernel_w;
            for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
              const auto y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - pad;
              if (y < 0 || y >= ih) continue;
              for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
                const auto x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - pad;
                if (x < 0 || x >= iw) continue;
                acc += ibase[y * iw + x] * wk[ky * d.kernel_w + kx];
              }
            }
          }
          obase[oy * d.out_w + ox] = acc;
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_input(std::span<const Real> grad_out, std::span<const Real> weight,
                           std::span<Real> grad_in, const ConvDims& d) {
  const bool big = d.batch * d.out_channels * d.out_h * d.out_w * d.in_channels *
                       d.kernel_h * d.kernel_w >= kParallelWork;
  const auto s = static_cast<std::ptrdiff_t>(d.stride);
  const auto oh = static_cast<std::ptrdiff_t>(d.out_h);
  const auto ow = static_cast<std::ptrdiff_t>(d.out_w);
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      Real* gbase = grad_in.data() + (b * d.in_channels + ci) * d.in_h * d.in_w;
      for (std::size_t y = 0; y < d.in_h; ++y) {
        for (std::size_t x = 0; x < d.in_w; ++x) {
          Real acc = 0;
          for (std::size_t co = 0; co < d.out_channels; ++co) {
            const Real* go = grad_out.data() + (b * d.out_channels + co) * d.out_h * d.out_w;
            const Real* wk = weight.data() + (co * d.in_channels + ci) * d.kernel_h * d.kernel_w;
            for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
              const auto ny = static_cast<std::ptrdiff_t>(y + d.padding) -
                              static_cast<std::ptrdiff_t>(ky);
              if (ny < 0 || ny % s != 0 || ny / s >= oh) continue;
              const auto oy = ny / s;
              for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
                const auto nx = static_cast<std::ptrdiff_t>(x + d.padding) -
                                static_cast<std::ptrdiff_t>(kx);
                if (nx < 0 || nx % s != 0 || nx / s >= ow) continue;
                acc += go[oy * ow + nx / s] * wk[ky * d.kernel_w + kx];
              }
            }
          }
          gbase[y * d.in_w + x] = acc;
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_weight(std::span<const Real> grad_out, std::span<const Real> input,
                            std::span<Real> grad_weight, const ConvDims& d) {
  const bool big = d.batch * d.out_channels * d.out_h * d.out_w * d.in_channels *
                       d.kernel_h * d.kernel_w >= kParallelWork;
  const auto ih = static_cast<std::ptrdiff_t>(d.in_h);
  const auto iw = static_cast<std::ptrdiff_t>(d.in_w);
  const auto pad = static_cast<std::ptrdiff_t>(d.padding);
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::size_t co = 0; co < d.out_channels; ++co) {
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      Real* gw = grad_weight.data() + (co * d.in_channels + ci) * d.kernel_h * d.kernel_w;
      for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
          Real acc = 0;
          for (std::size_t b = 0; b < d.batch; ++b) {
            const Real* go = grad_out.data() + (b * d.out_channels + co) * d.out_h * d.out_w;
            const Real* in = input.data() + (b * d.in_channels + ci) * d.in_h * d.in_w;
            for (std::size_t oy = 0; oy < d.out_h; ++oy) {
              const auto y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) - pad;
              if (y < 0 || y >= ih) continue;
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                const auto x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) - pad;
                if (x < 0 || x >= iw) continue;
                acc += go[oy * d.out_w + ox] * in[y * iw + x];
              }
            }
          }
          gw[ky * d.kernel_w + kx] = acc;
        }
      }
    }
  }
}

#define PDQAT_INSTANTIATE(Real)                                                          \
  template void gemm_nn<Real>(std::span<const Real>, std::span<const Real>,             \
                              std::span<Real>, std::size_t, std::size_t, std::size_t);  \
  template void gemm_nt<Real>(std::span<const Real>, std::span<const Real>,             \
                              std::span<Real>, std::size_t, std::size_t, std::size_t);  \
  template void gemm_tn<Real>(std::span<const Real>, std::span<const Real>,             \
                              std::span<Real>, std::size_t, std::size_t, std::size_t);  \
  template void conv2d_forward<Real>(std::span<const Real>, std::span<const Real>,      \
                                     std::span<Real>, const ConvDims&);                 \
  template void conv2d_backward_input<Real>(std::span<const Real>,                      \
                                            std::span<const Real>, std::span<Real>,     \
                                            const ConvDims&);                           \
  template void conv2d_backward_weight<Real>(std::span<const Real>,                     \
                                             std::span<const Real>, std::span<Real>,    \
                                             const ConvDims&);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)

}  // namespace parallel
}  // namespace pdqat::kernels

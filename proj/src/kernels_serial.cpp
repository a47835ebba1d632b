// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/kernels.hpp"

namespace pdqat::kernels::serial {

template <typename Real>
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename Real>
void conv2d_forward(std::span<const Real> input, std::span<const Real> weight,
                    std::span<Real> output, const ConvDims& d) {
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t co = 0; co < d.out_channels; ++co) {
      for (std::size_t oy = 0; oy < d.out_h; ++oy) {
        for (std::size_t ox = 0; ox < d.out_w; ++ox) {
          Real acc = 0;
          for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
              const auto y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                             static_cast<std::ptrdiff_t>(d.padding);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
              for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
                const auto x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                               static_cast<std::ptrdiff_t>(d.padding);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
                acc += input[((b * d.in_channels + ci) * d.in_h + y) * d.in_w + x] *
                       weight[((co * d.in_channels + ci) * d.kernel_h + ky) * d.kernel_w + kx];
              }
            }
          }
          output[((b * d.out_channels + co) * d.out_h + oy) * d.out_w + ox] = acc;
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_input(std::span<const Real> grad_out, std::span<const Real> weight,
                           std::span<Real> grad_in, const ConvDims& d) {
  const auto s = static_cast<std::ptrdiff_t>(d.stride);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      for (std::size_t y = 0; y < d.in_h; ++y) {
        for (std::size_t x = 0; x < d.in_w; ++x) {
          Real acc = 0;
          for (std::size_t co = 0; co < d.out_channels; ++co) {
            for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
              const auto ny = static_cast<std::ptrdiff_t>(y + d.padding) -
                              static_cast<std::ptrdiff_t>(ky);
              if (ny < 0 || ny % s != 0 || ny / s >= static_cast<std::ptrdiff_t>(d.out_h))
                continue;
              const auto oy = static_cast<std::size_t>(ny / s);
              for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
                const auto nx = static_cast<std::ptrdiff_t>(x + d.padding) -
                                static_cast<std::ptrdiff_t>(kx);
                if (nx < 0 || nx % s != 0 || nx / s >= static_cast<std::ptrdiff_t>(d.out_w))
                  continue;
                const auto ox = static_cast<std::size_t>(nx / s);
                acc += grad_out[((b * d.out_channels + co) * d.out_h + oy) * d.out_w + ox] *
                       weight[((co * d.in_channels + ci) * d.kernel_h + ky) * d.kernel_w + kx];
              }
            }
          }
          grad_in[((b * d.in_channels + ci) * d.in_h + y) * d.in_w + x] = acc;
        }
      }
    }
  }
}

template <typename Real>
void conv2d_backward_weight(std::span<const Real> grad_out, std::span<const Real> input,
                            std::span<Real> grad_weight, const ConvDims& d) {
  for (std::size_t co = 0; co < d.out_channels; ++co) {
    for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
      for (std::size_t ky = 0; ky < d.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < d.kernel_w; ++kx) {
          Real acc = 0;
          for (std::size_t b = 0; b < d.batch; ++b) {
            for (std::size_t oy = 0; oy < d.out_h; ++oy) {
              const auto y = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                             static_cast<std::ptrdiff_t>(d.padding);
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
              for (std::size_t ox = 0; ox < d.out_w; ++ox) {
                const auto x = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                               static_cast<std::ptrdiff_t>(d.padding);
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
                acc += grad_out[((b * d.out_channels + co) * d.out_h + oy) * d.out_w + ox] *
                       input[((b * d.in_channels + ci) * d.in_h + y) * d.in_w + x];
              }
            }
          }
          grad_weight[((co * d.in_channels + ci) * d.kernel_h + ky) * d.kernel_w + kx] = acc;
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

}  // namespace pdqat::kernels::serial

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "pdqat/kernels.hpp"

namespace {

using namespace pdqat::kernels;

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

template <bool Parallel>
void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = noise(n * n, 1), b = noise(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::gemm_nn<float>(a, b, c, n, n, n);
    else
      serial::gemm_nn<float>(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(2 * n * n * n));
}

ConvDims conv_dims(std::size_t batch) {
  ConvDims d;
  d.batch = batch;
  d.in_channels = 16;
  d.in_h = d.in_w = 28;
  d.out_channels = 32;
  d.kernel_h = d.kernel_w = 3;
  d.stride = 1;
  d.padding = 1;
  d.out_h = d.out_w = 28;
  return d;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
  const ConvDims d = conv_dims(static_cast<std::size_t>(state.range(0)));
  const auto in = noise(d.batch * d.in_channels * d.in_h * d.in_w, 3);
  const auto w = noise(d.out_channels * d.in_channels * d.kernel_h * d.kernel_w, 4);
  std::vector<float> out(d.batch * d.out_channels * d.out_h * d.out_w);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::conv2d_forward<float>(in, w, out, d);
    else
      serial::conv2d_forward<float>(in, w, out, d);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Conv2dBackwardWeight(benchmark::State& state) {
  const ConvDims d = conv_dims(static_cast<std::size_t>(state.range(0)));
  const auto in = noise(d.batch * d.in_channels * d.in_h * d.in_w, 5);
  const auto g = noise(d.batch * d.out_channels * d.out_h * d.out_w, 6);
  std::vector<float> gw(d.out_channels * d.in_channels * d.kernel_h * d.kernel_w);
  for (auto _ : state) {
    if constexpr (Parallel)
      parallel::conv2d_backward_weight<float>(g, in, gw, d);
    else
      serial::conv2d_backward_weight<float>(g, in, gw, d);
    benchmark::DoNotOptimize(gw.data());
  }
}

BENCHMARK(BM_GemmNN<false>)->Name("gemm_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNN<true>)->Name("gemm_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_Conv2dForward<false>)->Name("conv2d_forward/serial")->Arg(8);
BENCHMARK(BM_Conv2dForward<true>)->Name("conv2d_forward/parallel")->Arg(8);
BENCHMARK(BM_Conv2dBackwardWeight<false>)->Name("conv2d_backward_weight/serial")->Arg(8);
BENCHMARK(BM_Conv2dBackwardWeight<true>)->Name("conv2d_backward_weight/parallel")->Arg(8);

}  // namespace

BENCHMARK_MAIN();

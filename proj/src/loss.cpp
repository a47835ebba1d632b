// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pdqat {

template <std::floating_point Real>
Tensor<Real> softmax(const Tensor<Real>& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax: logits must be B x K");
  const std::size_t k = logits.dim(1);
  Tensor<Real> out(logits.shape());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto in = logits.row(b);
    auto o = out.row(b);
    const Real mx = *std::max_element(in.begin(), in.end());
    Real sum = 0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

template <std::floating_point Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                       std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be B x K");
  const std::size_t batch = logits.rows();
  const std::size_t k = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(batch));
  }
  LossResult<Real> r;
  r.grad = Tensor<Real>(logits.shape());
  double total = 0;
  const Real inv_b = Real(1) / Real(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    auto in = logits.row(b);
    const Real mx = *std::max_element(in.begin(), in.end());
    Real sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(in[j] - mx);
    const Real log_z = mx + std::log(sum);
    total += static_cast<double>(log_z - in[y]);
    auto g = r.grad.row(b);
    for (std::size_t j = 0; j < k; ++j) {
      const Real p = std::exp(in[j] - log_z);
      g[j] = (p - (static_cast<int>(j) == y ? Real(1) : Real(0))) * inv_b;
    }
  }
  r.loss = total / static_cast<double>(batch);
  return r;
}

template <std::floating_point Real>
std::vector<int> argmax_rows(const Tensor<Real>& t) {
  std::vector<int> out(t.rows());
  for (std::size_t b = 0; b < t.rows(); ++b) {
    auto r = t.row(b);
    out[b] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

template Tensor<float> softmax(const Tensor<float>&);
template Tensor<double> softmax(const Tensor<double>&);
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const int>);
template std::vector<int> argmax_rows(const Tensor<float>&);
template std::vector<int> argmax_rows(const Tensor<double>&);

}  // namespace pdqat

// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <span>

#include "pdqat/tensor.hpp"

namespace pdqat {

/// Row-wise softmax of a [B x K] tensor.
template <std::floating_point Real>
Tensor<Real> softmax(const Tensor<Real>& logits);

template <std::floating_point Real>
struct LossResult {
  double loss = 0;
  Tensor<Real> grad;  // d loss / d logits
};

/// Mean over the batch of -log softmax(logits)[label]; the gradient is
/// (softmax - onehot) / B. Labels must lie in [0, K).
template <std::floating_point Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                       std::span<const int> labels);

/// Index of the largest entry per row; ties go to the lowest index.
template <std::floating_point Real>
std::vector<int> argmax_rows(const Tensor<Real>& t);

}  // namespace pdqat

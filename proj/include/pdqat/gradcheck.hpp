// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "pdqat/tensor.hpp"

namespace pdqat {

struct GradcheckOptions {
  double step = 1e-5;
  /// Check at most this many randomly chosen entries per target; 0 = all.
  std::size_t max_entries_per_target = 0;
  std::uint64_t seed = 0;
};

/// One tensor under test together with the analytic gradient already
/// computed for it at the current point.
template <std::floating_point Real>
struct GradTarget {
  std::string name;
  Tensor<Real>* value = nullptr;
  const Tensor<Real>* grad = nullptr;
};

struct GradcheckReport {
  double max_rel_error = 0;
  std::string worst_target;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t entries_checked = 0;
};

/// |a - n| / max(1, |a|, |n|).
double relative_error(double analytic, double numeric);

/// Compares each target's analytic gradient against central differences of
/// `loss` with step h. Every perturbed entry is restored before returning.
template <std::floating_point Real>
GradcheckReport gradcheck(std::span<const GradTarget<Real>> targets,
                          const std::function<double()>& loss,
                          const GradcheckOptions& options = {});

}  // namespace pdqat

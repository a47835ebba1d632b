// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pdqat {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

template <std::floating_point Real>
GradcheckReport gradcheck(std::span<const GradTarget<Real>> targets,
                          const std::function<double()>& loss,
                          const GradcheckOptions& options) {
  GradcheckReport report;
  std::mt19937_64 rng(options.seed);
  for (const auto& t : targets) {
    if (!t.value || !t.grad || t.value->shape() != t.grad->shape())
      throw DimensionError("gradcheck: target '" + t.name + "' has mismatched gradient");
    std::vector<std::size_t> idx(t.value->size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_entries_per_target && idx.size() > options.max_entries_per_target) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_entries_per_target);
    }
    for (std::size_t i : idx) {
      Real& x = (*t.value)[i];
      const Real saved = x;
      x = static_cast<Real>(saved + options.step);
      const double up = loss();
      x = static_cast<Real>(saved - options.step);
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2 * options.step);
      const double analytic = static_cast<double>((*t.grad)[i]);
      const double err = relative_error(analytic, numeric);
      ++report.entries_checked;
      if (report.entries_checked == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_target = t.name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

template GradcheckReport gradcheck(std::span<const GradTarget<float>>,
                                   const std::function<double()>&, const GradcheckOptions&);
template GradcheckReport gradcheck(std::span<const GradTarget<double>>,
                                   const std::function<double()>&, const GradcheckOptions&);

}  // namespace pdqat

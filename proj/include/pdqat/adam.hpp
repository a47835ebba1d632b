// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pdqat/nn.hpp"

namespace pdqat {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Epoch indices (number of completed epochs) at which the learning rate
  /// is multiplied by `decay`.
  std::vector<std::size_t> milestones{50, 75, 90};
  double decay = 0.1;

  /// Throws InputError unless lr >= 0 and 0 <= beta1, beta2 < 1. A zero rate
  /// freezes the parameters.
  void validate() const;
};

/// Bias-corrected adaptive-moment optimizer with multi-step decay. Moment
/// buffers live in each Param; the optimizer only owns the step counter and
/// the current epoch.
template <std::floating_point Real>
class Adam {
 public:
  explicit Adam(AdamConfig config);

  void set_epoch(std::size_t completed_epochs) { epoch_ = completed_epochs; }
  double effective_lr() const;
  long steps() const { return step_; }
  const AdamConfig& config() const { return config_; }

  /// One update of every parameter in `groups` from its accumulated grad.
  void step(std::span<LayerParams<Real>* const> groups);
  void step(LayerParams<Real>& params);

 private:
  AdamConfig config_;
  long step_ = 0;
  std::size_t epoch_ = 0;
};

}  // namespace pdqat

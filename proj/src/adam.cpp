// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/adam.hpp"

#include <cmath>

namespace pdqat {

void AdamConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw InputError("adam: learning rate must be finite and >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw InputError("adam: betas must lie in [0, 1)");
  if (!(eps > 0)) throw InputError("adam: eps must be > 0");
}

template <std::floating_point Real>
Adam<Real>::Adam(AdamConfig config) : config_(std::move(config)) {
  config_.validate();
}

template <std::floating_point Real>
double Adam<Real>::effective_lr() const {
  double lr = config_.lr;
  for (std::size_t m : config_.milestones)
    if (epoch_ >= m) lr *= config_.decay;
  return lr;
}

template <std::floating_point Real>
void Adam<Real>::step(std::span<LayerParams<Real>* const> groups) {
  ++step_;
  const double lr = effective_lr();
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const auto b1 = static_cast<Real>(config_.beta1);
  const auto b2 = static_cast<Real>(config_.beta2);
  const auto eps = static_cast<Real>(config_.eps);
  const auto step_size = static_cast<Real>(lr / c1);
  const auto inv_c2 = static_cast<Real>(1.0 / c2);
  for (LayerParams<Real>* group : groups) {
    for (auto& p : group->all()) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const Real g = p.grad[i];
        p.m[i] = b1 * p.m[i] + (Real(1) - b1) * g;
        p.v[i] = b2 * p.v[i] + (Real(1) - b2) * g * g;
        p.value[i] -= step_size * p.m[i] / (std::sqrt(p.v[i] * inv_c2) + eps);
      }
    }
  }
}

template <std::floating_point Real>
void Adam<Real>::step(LayerParams<Real>& params) {
  LayerParams<Real>* one[] = {&params};
  step(one);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace pdqat

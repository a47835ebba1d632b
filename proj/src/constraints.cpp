// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/constraints.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pdqat/errors.hpp"
#include "pdqat/loss.hpp"

namespace pdqat {

std::string_view to_string(MseNorm n) {
  return n == MseNorm::per_sample_l2 ? "per_sample_l2" : "per_element";
}

MseNorm mse_norm_from_string(std::string_view s) {
  if (s == "per_element") return MseNorm::per_element;
  if (s == "per_sample_l2") return MseNorm::per_sample_l2;
  throw InputError("unknown mse_norm '" + std::string(s) +
                   "' (expected per_element or per_sample_l2)");
}

double default_epsilon(int bits) {
  if (bits < 1 || bits > kMaxBits) {
    throw InputError("bitwidth " + std::to_string(bits) + " outside [1, " +
                     std::to_string(kMaxBits) + "]");
  }
  return 1.0 / grid_levels(bits);
}

void ConstraintSet::validate(std::size_t constraints) const {
  if (eps_layer.size() != constraints) {
    throw InputError("constraints: " + std::to_string(eps_layer.size()) +
                     " layer bounds given for " + std::to_string(constraints) +
                     " constrained layers");
  }
  for (std::size_t l = 0; l < eps_layer.size(); ++l) {
    if (!std::isfinite(eps_layer[l]) || eps_layer[l] < 0)
      throw InputError("constraints: eps for layer " + std::to_string(l + 1) +
                       " must be finite and >= 0");
  }
  if (!std::isfinite(eps_out) || eps_out < 0)
    throw InputError("constraints: eps_out must be finite and >= 0");
  if (!(log_clamp > 0) || log_clamp >= 1)
    throw InputError("constraints: log clamp must lie in (0, 1)");
}

ConstraintSet ConstraintSet::defaults_for(const QuantSpec& quant, double eps_out,
                                          int fallback_bits) {
  int widest = 0;
  for (const auto& e : quant.entries())
    if (e.enabled) widest = std::max(widest, e.bits);
  const int hp_bits = widest > 0 ? widest : fallback_bits;
  ConstraintSet cs;
  cs.eps_out = eps_out;
  for (std::size_t l = 0; l + 1 < quant.size(); ++l)
    cs.eps_layer.push_back(default_epsilon(quant[l].enabled ? quant[l].bits : hp_bits));
  return cs;
}

namespace {

template <std::floating_point Real>
double mse_denominator(const Tensor<Real>& t, MseNorm norm) {
  return norm == MseNorm::per_element ? double(t.size()) : double(t.rows());
}

template <std::floating_point Real>
void check_rows_sum_to_one(const Tensor<Real>& p, const char* which) {
  if (p.rank() != 2) throw DimensionError(std::string("output distance: ") + which + " must be B x K");
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0;
    for (const Real v : p.row(r)) s += double(v);
    if (!(std::abs(s - 1.0) <= 1e-4)) {
      throw ContractError(std::string("output distance: ") + which + " row " +
                          std::to_string(r) + " sums to " + std::to_string(s) +
                          ", expected a probability row");
    }
  }
}

}  // namespace

template <std::floating_point Real>
double layer_distance(const Tensor<Real>& hybrid, const Tensor<Real>& quant, MseNorm norm) {
  if (hybrid.shape() != quant.shape()) {
    throw DimensionError("layer distance: shapes " + shape_str(hybrid.shape()) + " and " +
                         shape_str(quant.shape()) + " differ");
  }
  double sum = 0;
  for (std::size_t i = 0; i < hybrid.size(); ++i) {
    const double d = double(hybrid[i]) - double(quant[i]);
    sum += d * d;
  }
  return sum / mse_denominator(hybrid, norm);
}

template <std::floating_point Real>
Tensor<Real> layer_distance_grad(const Tensor<Real>& hybrid, const Tensor<Real>& quant,
                                 MseNorm norm, double scale) {
  if (hybrid.shape() != quant.shape())
    throw DimensionError("layer distance: shapes " + shape_str(hybrid.shape()) + " and " +
                         shape_str(quant.shape()) + " differ");
  const double c = 2.0 * scale / mse_denominator(hybrid, norm);
  Tensor<Real> g(hybrid.shape());
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = Real(c * (double(hybrid[i]) - double(quant[i])));
  return g;
}

template <std::floating_point Real>
double output_distance(const Tensor<Real>& p_full, const Tensor<Real>& p_quant, double clamp) {
  if (p_full.shape() != p_quant.shape())
    throw DimensionError("output distance: shapes " + shape_str(p_full.shape()) + " and " +
                         shape_str(p_quant.shape()) + " differ");
  check_rows_sum_to_one(p_full, "p_full");
  check_rows_sum_to_one(p_quant, "p_quant");
  double total = 0;
  for (std::size_t i = 0; i < p_full.size(); ++i)
    total -= double(p_full[i]) * std::log(std::max(double(p_quant[i]), clamp));
  return total / double(p_full.rows());
}

template <std::floating_point Real>
Tensor<Real> output_distance_logit_grad(const Tensor<Real>& p_full, const Tensor<Real>& p_quant,
                                        double clamp, double scale) {
  if (p_full.shape() != p_quant.shape() || p_full.rank() != 2)
    throw DimensionError("output distance: probability tensors must share a B x K shape");
  const std::size_t B = p_full.rows(), K = p_full.row_size();
  const double c = scale / double(B);
  Tensor<Real> g(p_full.shape());
  std::vector<double> neg_log(K);
  for (std::size_t b = 0; b < B; ++b) {
    double mean = 0;
    for (std::size_t k = 0; k < K; ++k) {
      neg_log[k] = -std::log(std::max(double(p_quant[b * K + k]), clamp));
      mean += double(p_full[b * K + k]) * neg_log[k];
    }
    for (std::size_t k = 0; k < K; ++k)
      g[b * K + k] = Real(c * double(p_full[b * K + k]) * (neg_log[k] - mean));
  }
  return g;
}

template <std::floating_point Real>
TraceDistances trace_distances(const DualForwardTrace<Real>& trace, const ConstraintSet& cs) {
  TraceDistances d;
  d.layer.reserve(trace.hybrid.size());
  for (std::size_t l = 0; l < trace.hybrid.size(); ++l)
    d.layer.push_back(layer_distance(trace.hybrid[l], trace.quant[l + 1], cs.mse_norm));
  d.out = output_distance(softmax(trace.full_output()), softmax(trace.quant_output()),
                          cs.log_clamp);
  return d;
}

void DistanceAccumulator::add(const TraceDistances& d, std::size_t batch_size) {
  if (d.layer.size() != layer_sum_.size())
    throw DimensionError("distance accumulator: constraint count mismatch");
  for (std::size_t l = 0; l < layer_sum_.size(); ++l) layer_sum_[l] += d.layer[l] * double(batch_size);
  out_sum_ += d.out * double(batch_size);
  samples_ += batch_size;
}

std::vector<double> DistanceAccumulator::mean_layer() const {
  std::vector<double> m(layer_sum_.size());
  for (std::size_t l = 0; l < m.size(); ++l) m[l] = layer_sum_[l] / double(samples_);
  return m;
}

double DistanceAccumulator::mean_out() const { return out_sum_ / double(samples_); }

SlackReport compute_slacks(const DistanceAccumulator& acc, const ConstraintSet& cs) {
  if (acc.samples() == 0) throw InputError("compute_slacks: no samples were evaluated");
  SlackReport r;
  r.samples = acc.samples();
  r.layer_distance = acc.mean_layer();
  if (cs.eps_layer.size() != r.layer_distance.size())
    throw InputError("compute_slacks: bound count does not match constraint count");
  r.layer_eps = cs.eps_layer;
  r.layer_slack.resize(r.layer_distance.size());
  for (std::size_t l = 0; l < r.layer_slack.size(); ++l)
    r.layer_slack[l] = r.layer_distance[l] - r.layer_eps[l];
  r.out_distance = acc.mean_out();
  r.out_eps = cs.eps_out;
  r.out_slack = r.out_distance - r.out_eps;
  return r;
}

#define PDQAT_INSTANTIATE(R)                                                                \
  template double layer_distance(const Tensor<R>&, const Tensor<R>&, MseNorm);             \
  template Tensor<R> layer_distance_grad(const Tensor<R>&, const Tensor<R>&, MseNorm,      \
                                         double);                                          \
  template double output_distance(const Tensor<R>&, const Tensor<R>&, double);             \
  template Tensor<R> output_distance_logit_grad(const Tensor<R>&, const Tensor<R>&, double, \
                                                double);                                   \
  template TraceDistances trace_distances(const DualForwardTrace<R>&, const ConstraintSet&);

PDQAT_INSTANTIATE(float)
PDQAT_INSTANTIATE(double)
#undef PDQAT_INSTANTIATE

}  // namespace pdqat

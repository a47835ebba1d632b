// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/shadow_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include "pdqat/errors.hpp"
#include "pdqat/loss.hpp"

namespace pdqat {

std::string_view to_string(LayerKind k) {
  return k == LayerKind::conv2d ? "conv2d" : "dense";
}

LayerKind layer_kind_from_string(std::string_view s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "conv2d" || s == "conv") return LayerKind::conv2d;
  throw InputError("unknown layer kind '" + std::string(s) + "' (expected dense or conv2d)");
}

namespace {

template <std::floating_point Real>
Tensor<Real> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.data()) v = Real(dist(rng));
  return t;
}

template <std::floating_point Real>
void accumulate(Tensor<Real>& into, const Tensor<Real>& g) {
  for (std::size_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

}  // namespace

template <std::floating_point Real>
ShadowModel<Real>::ShadowModel(ModelSpec spec, QuantSpec quant, std::uint64_t seed)
    : spec_(std::move(spec)), quant_(std::move(quant)) {
  if (spec_.blocks.empty()) throw InputError("model: at least one layer is required");
  if (spec_.input_shape.empty() || shape_numel(spec_.input_shape) == 0)
    throw InputError("model: input shape must be non-empty with positive dimensions");
  if (quant_.size() != spec_.blocks.size()) {
    throw InputError("model: quantization spec has " + std::to_string(quant_.size()) +
                     " entries for " + std::to_string(spec_.blocks.size()) + " layers");
  }
  const BlockSpec& last = spec_.blocks.back();
  if (last.kind != LayerKind::dense || last.activation != Activation::none)
    throw InputError("model: the last layer must be dense with activation none (logits)");
  if (last.units < 2) throw InputError("model: at least two output classes are required");

  std::mt19937_64 rng(seed);
  Shape in = spec_.input_shape;
  for (std::size_t l = 0; l < spec_.blocks.size(); ++l) {
    const BlockSpec& bs = spec_.blocks[l];
    const std::string name = layer_name(l);
    if (bs.units == 0) throw InputError(name + ": units must be positive");
    Block<Real> block;
    block.spec = bs;
    block.in_shape = in;
    if (bs.kind == LayerKind::dense) {
      const std::size_t n = shape_numel(in);
      block.params.add("weight", glorot<Real>({n, bs.units}, n, bs.units, rng));
      block.out_shape = {bs.units};
    } else {
      if (in.size() != 3)
        throw DimensionError(name + ": conv2d expects C x H x W input, got " + shape_str(in));
      if (bs.kernel == 0 || bs.stride == 0) throw InputError(name + ": kernel and stride must be positive");
      const std::size_t oh = conv_output_size(in[1], bs.kernel, bs.stride, bs.padding, name);
      const std::size_t ow = conv_output_size(in[2], bs.kernel, bs.stride, bs.padding, name);
      const std::size_t area = bs.kernel * bs.kernel;
      block.params.add("weight", glorot<Real>({bs.units, in[0], bs.kernel, bs.kernel},
                                              in[0] * area, bs.units * area, rng));
      block.out_shape = {bs.units, oh, ow};
    }
    if (bs.bias) block.params.add("bias", Tensor<Real>({bs.units}));
    if (bs.batchnorm) {
      block.params.add("bn_gamma", Tensor<Real>({bs.units}, Real(1)));
      block.params.add("bn_beta", Tensor<Real>({bs.units}));
      block.bn_full = BatchNormState<Real>::make(bs.units);
      block.bn_quant = BatchNormState<Real>::make(bs.units);
    }
    in = block.out_shape;
    blocks_.push_back(std::move(block));
  }
}

template <std::floating_point Real>
std::string ShadowModel<Real>::layer_name(std::size_t layer) const {
  return "layer " + std::to_string(layer + 1) + " (" +
         std::string(to_string(spec_.blocks[layer].kind)) + ")";
}

template <std::floating_point Real>
std::vector<LayerParams<Real>*> ShadowModel<Real>::parameter_groups() {
  std::vector<LayerParams<Real>*> out;
  for (auto& b : blocks_) out.push_back(&b.params);
  return out;
}

template <std::floating_point Real>
void ShadowModel<Real>::zero_grad() {
  for (auto& b : blocks_) b.params.zero_grad();
}

template <std::floating_point Real>
void ShadowModel<Real>::set_precision(std::size_t layer, bool enabled, int bits) {
  if (layer >= blocks_.size()) {
    throw InputError("unknown layer id " + std::to_string(layer) + " (model has " +
                     std::to_string(blocks_.size()) + " layers)");
  }
  quant_.set(layer, enabled, bits);
}

template <std::floating_point Real>
void ShadowModel<Real>::set_quant_spec(QuantSpec quant) {
  if (quant.size() != blocks_.size()) {
    throw InputError("quantization spec has " + std::to_string(quant.size()) +
                     " entries for " + std::to_string(blocks_.size()) + " layers");
  }
  quant_ = std::move(quant);
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::shape_input(const Tensor<Real>& batch) const {
  if (batch.empty()) throw DimensionError("model: empty input batch");
  const std::size_t per_sample = shape_numel(spec_.input_shape);
  if (batch.row_size() != per_sample) {
    throw DimensionError("layer 1: input sample has " + std::to_string(batch.row_size()) +
                         " values, model expects " + shape_str(spec_.input_shape));
  }
  Shape s{batch.rows()};
  s.insert(s.end(), spec_.input_shape.begin(), spec_.input_shape.end());
  if (s == batch.shape()) return batch;
  return batch.reshaped(std::move(s));
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::run_block(std::size_t layer, const Tensor<Real>& input,
                                          const Tensor<Real>& weight, BatchNormState<Real>& bn,
                                          bool training, bool update_stats, int act_bits,
                                          BlockTape<Real>* tape) {
  Block<Real>& block = blocks_[layer];
  const BlockSpec& bs = block.spec;
  const std::string name = layer_name(layer);
  const Tensor<Real>* bias = bs.bias ? &block.params.get("bias").value : nullptr;

  Tensor<Real> z;
  if (bs.kind == LayerKind::dense) {
    z = dense_forward(input, weight, bias, tape ? &tape->dense : nullptr, name);
  } else {
    z = conv2d_forward(input, weight, bias, Conv2dGeometry{bs.stride, bs.padding},
                       tape ? &tape->conv : nullptr, name);
  }
  if (bs.batchnorm) {
    bn.training = training;
    z = batchnorm_forward(z, bn, block.params.get("bn_gamma").value,
                          block.params.get("bn_beta").value, tape ? &tape->bn : nullptr,
                          training && update_stats);
  }
  Tensor<Real> a = activation_forward(z, bs.activation);
  if (tape) {
    tape->pre_activation = std::move(z);
    tape->recorded = true;
  }
  if (act_bits > 0 && bs.activation != Activation::none) {
    Tensor<Real> q = quantize_activations(a, act_bits);
    if (tape) tape->pre_quant = std::move(a);
    return q;
  }
  return a;
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::quant_step(std::size_t layer, const Tensor<Real>& input,
                                           const Tensor<Real>& quant_weight,
                                           const PassOptions& options, BlockTape<Real>* tape) {
  Block<Real>& block = blocks_[layer];
  const QuantEntry& q = quant_[layer];
  if (q.enabled) {
    return run_block(layer, input, quant_weight, block.bn_quant, options.training,
                     options.update_stats, q.bits, tape);
  }
  // A high-precision layer is the same function in both models.
  return run_block(layer, input, block.params.get("weight").value, block.bn_full,
                   options.training, false, 0, tape);
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::forward_full(const Tensor<Real>& batch,
                                             const PassOptions& options,
                                             std::vector<BlockTape<Real>>* tapes) {
  Tensor<Real> z = shape_input(batch);
  if (tapes) tapes->assign(blocks_.size(), {});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    z = run_block(l, z, blocks_[l].params.get("weight").value, blocks_[l].bn_full,
                  options.training, options.update_stats, 0, tapes ? &(*tapes)[l] : nullptr);
  }
  return z;
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::forward_quant(const Tensor<Real>& batch,
                                              const PassOptions& options,
                                              std::vector<BlockTape<Real>>* tapes,
                                              std::vector<Tensor<Real>>* quant_weights) {
  Tensor<Real> z = shape_input(batch);
  if (tapes) tapes->assign(blocks_.size(), {});
  if (quant_weights) quant_weights->assign(blocks_.size(), {});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    Tensor<Real> qw;
    if (quant_[l].enabled) qw = quantize_weights(blocks_[l].params.get("weight").value, quant_[l].bits);
    z = quant_step(l, z, qw, options, tapes ? &(*tapes)[l] : nullptr);
    if (quant_weights) (*quant_weights)[l] = std::move(qw);
  }
  return z;
}

template <std::floating_point Real>
DualForwardTrace<Real> ShadowModel<Real>::forward_pair(const Tensor<Real>& batch,
                                                       const PassOptions& options,
                                                       const DualForwardTrace<Real>* frozen) {
  const std::size_t L = blocks_.size();
  DualForwardTrace<Real> trace;
  const Tensor<Real> x = shape_input(batch);

  trace.full.reserve(L + 1);
  trace.full.push_back(x);
  if (options.record) trace.full_tapes.assign(L, {});
  for (std::size_t l = 0; l < L; ++l) {
    trace.full.push_back(run_block(l, trace.full[l], blocks_[l].params.get("weight").value,
                                   blocks_[l].bn_full, options.training, options.update_stats,
                                   0, options.record ? &trace.full_tapes[l] : nullptr));
  }

  if (frozen) {
    if (frozen->quant.size() != L + 1 || frozen->quant.front().shape() != x.shape())
      throw DimensionError("forward_pair: frozen trace does not match this batch");
    trace.quant = frozen->quant;
    trace.quant_weights = frozen->quant_weights;
  } else {
    trace.quant.reserve(L + 1);
    trace.quant.push_back(x);
    trace.quant_weights.assign(L, {});
    for (std::size_t l = 0; l < L; ++l) {
      if (quant_[l].enabled)
        trace.quant_weights[l] = quantize_weights(blocks_[l].params.get("weight").value, quant_[l].bits);
      trace.quant.push_back(quant_step(l, trace.quant[l], trace.quant_weights[l], options, nullptr));
    }
  }

  trace.hybrid.reserve(L - 1);
  if (options.record) trace.hybrid_tapes.assign(L - 1, {});
  for (std::size_t l = 0; l + 1 < L; ++l) {
    trace.hybrid.push_back(run_block(l, trace.quant[l], blocks_[l].params.get("weight").value,
                                     blocks_[l].bn_full, options.training, false, 0,
                                     options.record ? &trace.hybrid_tapes[l] : nullptr));
  }
  return trace;
}

template <std::floating_point Real>
Tensor<Real> ShadowModel<Real>::backward_through(std::size_t layer, const Tensor<Real>& grad_out,
                                                 const BlockTape<Real>& tape,
                                                 const Tensor<Real>& weight,
                                                 Tensor<Real>* grad_weight) {
  const std::string name = layer_name(layer);
  if (!tape.recorded) throw StateError(name + ": backward called without a recorded forward pass");
  Block<Real>& block = blocks_[layer];
  const BlockSpec& bs = block.spec;

  Tensor<Real> g = grad_out;
  if (!tape.pre_quant.empty()) g = ste_backward(g, tape.pre_quant);
  g = activation_backward(g, tape.pre_activation, bs.activation);
  if (bs.batchnorm) {
    auto& gamma = block.params.get("bn_gamma");
    auto& beta = block.params.get("bn_beta");
    g = batchnorm_backward(g, tape.bn, gamma.value, &gamma.grad, &beta.grad);
  }
  Tensor<Real>* grad_bias = bs.bias ? &block.params.get("bias").grad : nullptr;
  if (bs.kind == LayerKind::dense)
    return dense_backward(g, tape.dense, weight, grad_weight, grad_bias, name);
  return conv2d_backward(g, tape.conv, weight, grad_weight, grad_bias, name);
}

template <std::floating_point Real>
void ShadowModel<Real>::backward_full(const Tensor<Real>& grad_logits,
                                      const std::vector<BlockTape<Real>>& tapes) {
  if (tapes.size() != blocks_.size())
    throw StateError("backward_full: expected one tape per layer");
  Tensor<Real> g = grad_logits;
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    auto& w = blocks_[l].params.get("weight");
    g = backward_through(l, g, tapes[l], w.value, &w.grad);
  }
}

template <std::floating_point Real>
void ShadowModel<Real>::backward_block(std::size_t layer, const Tensor<Real>& grad_out,
                                       const BlockTape<Real>& tape) {
  if (layer >= blocks_.size()) throw InputError("unknown layer id " + std::to_string(layer));
  auto& w = blocks_[layer].params.get("weight");
  (void)backward_through(layer, grad_out, tape, w.value, &w.grad);
}

template <std::floating_point Real>
void ShadowModel<Real>::backward_quant_ste(const Tensor<Real>& grad_logits,
                                           const std::vector<BlockTape<Real>>& tapes,
                                           const std::vector<Tensor<Real>>& quant_weights) {
  if (tapes.size() != blocks_.size() || quant_weights.size() != blocks_.size())
    throw StateError("backward_quant_ste: expected one tape and weight slot per layer");
  Tensor<Real> g = grad_logits;
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    auto& w = blocks_[l].params.get("weight");
    if (quant_[l].enabled) {
      Tensor<Real> gq = Tensor<Real>::zeros_like(w.value);
      g = backward_through(l, g, tapes[l], quant_weights[l], &gq);
      accumulate(w.grad, ste_weight_backward(gq, w.value));
    } else {
      g = backward_through(l, g, tapes[l], w.value, &w.grad);
    }
  }
}

template <std::floating_point Real>
double ShadowModel<Real>::min_kink_distance(const DualForwardTrace<Real>& trace) const {
  double best = std::numeric_limits<double>::infinity();
  auto scan = [&](std::size_t layer, const BlockTape<Real>& tape) {
    const Activation act = blocks_[layer].spec.activation;
    if (act == Activation::none || !tape.recorded) return;
    for (const Real v : tape.pre_activation.data()) {
      double d = std::abs(double(v));
      if (act == Activation::clip) d = std::min(d, std::abs(double(v) - 1.0));
      best = std::min(best, d);
    }
  };
  for (std::size_t l = 0; l < trace.full_tapes.size(); ++l) scan(l, trace.full_tapes[l]);
  for (std::size_t l = 0; l < trace.hybrid_tapes.size(); ++l) scan(l, trace.hybrid_tapes[l]);
  return best;
}

namespace {

template <std::floating_point Real, class Forward>
double eval_accuracy(const Dataset<Real>& data, std::size_t batch_size, Forward&& forward) {
  data.validate();
  if (batch_size == 0) throw InputError("evaluation batch size must be positive");
  BatchSequence<Real> batches(data, batch_size, std::nullopt);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const Batch<Real> b = batches[i];
    const std::vector<int> pred = argmax_rows(forward(b.features));
    for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == b.labels[j];
  }
  return double(correct) / double(data.size());
}

}  // namespace

template <std::floating_point Real>
double quantized_eval_accuracy(ShadowModel<Real>& model, const Dataset<Real>& data,
                               std::size_t batch_size) {
  const PassOptions eval{.training = false, .update_stats = false, .record = false};
  return eval_accuracy(data, batch_size,
                       [&](const Tensor<Real>& x) { return model.forward_quant(x, eval); });
}

template <std::floating_point Real>
double full_eval_accuracy(ShadowModel<Real>& model, const Dataset<Real>& data,
                          std::size_t batch_size) {
  const PassOptions eval{.training = false, .update_stats = false, .record = false};
  return eval_accuracy(data, batch_size,
                       [&](const Tensor<Real>& x) { return model.forward_full(x, eval); });
}

template class ShadowModel<float>;
template class ShadowModel<double>;
template double quantized_eval_accuracy(ShadowModel<float>&, const Dataset<float>&, std::size_t);
template double quantized_eval_accuracy(ShadowModel<double>&, const Dataset<double>&, std::size_t);
template double full_eval_accuracy(ShadowModel<float>&, const Dataset<float>&, std::size_t);
template double full_eval_accuracy(ShadowModel<double>&, const Dataset<double>&, std::size_t);

}  // namespace pdqat

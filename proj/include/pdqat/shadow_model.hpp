// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pdqat/data.hpp"
#include "pdqat/nn.hpp"
#include "pdqat/quantize.hpp"
#include "pdqat/tensor.hpp"

// A full-precision network f = f_L o ... o f_1 paired with its quantized
// counterpart f^q. Both share one set of parameters; the quantized blocks
// evaluate q_w(weights) and quantize their output activations. Each
// batch-normalized block carries two running-statistic states (one per
// precision) and one shared affine scale/shift.
//
// Gradient contract: the quantized chain z^q_l and the quantized output
// f^q(x) are constants with respect to the parameters. Gradients flow only
// through the full chain f(x) and through the hybrid evaluations
// f_l(z^q_{l-1}), i.e. the full-precision block applied to the quantized
// chain's input.

namespace pdqat {

enum class LayerKind { dense, conv2d };

std::string_view to_string(LayerKind k);
LayerKind layer_kind_from_string(std::string_view s);

struct BlockSpec {
  LayerKind kind = LayerKind::dense;
  /// Output width (dense) or output channels (conv2d).
  std::size_t units = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Activation activation = Activation::clip;
  bool batchnorm = false;
  bool bias = true;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct ModelSpec {
  /// Shape of one input sample, e.g. {2} or {1, 28, 28}.
  Shape input_shape;
  std::vector<BlockSpec> blocks;

  std::size_t num_classes() const { return blocks.empty() ? 0 : blocks.back().units; }
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <std::floating_point Real>
struct Block {
  BlockSpec spec;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  LayerParams<Real> params;  // weight, [bias], [bn_gamma, bn_beta]
  BatchNormState<Real> bn_full;
  BatchNormState<Real> bn_quant;
};

/// Everything one block's backward pass needs from its forward pass.
template <std::floating_point Real>
struct BlockTape {
  DenseCache<Real> dense;
  Conv2dCache<Real> conv;
  BatchNormCache<Real> bn;
  Tensor<Real> pre_activation;
  Tensor<Real> pre_quant;  // activation output before q_a (quantized blocks)
  bool recorded = false;
};

struct PassOptions {
  bool training = true;
  /// Fold batch statistics into running estimates (training mode only).
  bool update_stats = true;
  /// Keep tapes for a backward pass.
  bool record = true;
};

template <std::floating_point Real>
struct DualForwardTrace {
  std::vector<Tensor<Real>> full;    // z_0 .. z_L, z_0 = x
  std::vector<Tensor<Real>> quant;   // z^q_0 .. z^q_L, z^q_0 = x
  std::vector<Tensor<Real>> hybrid;  // f_l(z^q_{l-1}) for l = 1 .. L-1
  std::vector<BlockTape<Real>> full_tapes;
  std::vector<BlockTape<Real>> hybrid_tapes;
  std::vector<Tensor<Real>> quant_weights;  // q_w(theta_l); empty when disabled

  const Tensor<Real>& full_output() const { return full.back(); }
  const Tensor<Real>& quant_output() const { return quant.back(); }
  std::size_t batch() const { return full.front().rows(); }
};

template <std::floating_point Real>
class ShadowModel {
 public:
  /// Builds blocks and draws Glorot-uniform weights from `seed`. Biases and
  /// batch-norm shifts start at zero, scales at one.
  ShadowModel(ModelSpec spec, QuantSpec quant, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  const QuantSpec& quant() const { return quant_; }
  std::size_t num_layers() const { return blocks_.size(); }
  /// Number of layerwise constraints, L - 1.
  std::size_t num_constraints() const { return blocks_.size() - 1; }

  std::vector<Block<Real>>& blocks() { return blocks_; }
  const std::vector<Block<Real>>& blocks() const { return blocks_; }
  std::vector<LayerParams<Real>*> parameter_groups();
  void zero_grad();

  /// Toggles quantization of one layer (0-based id). Throws InputError for
  /// an unknown id or an invalid bitwidth.
  void set_precision(std::size_t layer, bool enabled, int bits);
  void set_quant_spec(QuantSpec quant);

  /// Full chain, quantized chain and hybrid evaluations for one batch. With
  /// `frozen`, the quantized chain (and quantized weights) are taken from an
  /// earlier trace of the same batch instead of being recomputed; this is
  /// the objective that detached gradients differentiate.
  DualForwardTrace<Real> forward_pair(const Tensor<Real>& batch, const PassOptions& options,
                                      const DualForwardTrace<Real>* frozen = nullptr);

  Tensor<Real> forward_full(const Tensor<Real>& batch, const PassOptions& options,
                            std::vector<BlockTape<Real>>* tapes = nullptr);

  Tensor<Real> forward_quant(const Tensor<Real>& batch, const PassOptions& options,
                             std::vector<BlockTape<Real>>* tapes = nullptr,
                             std::vector<Tensor<Real>>* quant_weights = nullptr);

  /// Backpropagates d/d logits through the full chain, accumulating
  /// parameter gradients.
  void backward_full(const Tensor<Real>& grad_logits,
                     const std::vector<BlockTape<Real>>& tapes);

  /// Accumulates parameter gradients of one block from a recorded tape; the
  /// input gradient is dropped (the input is a detached quantized
  /// activation).
  void backward_block(std::size_t layer, const Tensor<Real>& grad_out,
                      const BlockTape<Real>& tape);

  /// Backpropagation through the quantized chain with straight-through
  /// estimates for q_a and q_w. Baseline trainer only.
  void backward_quant_ste(const Tensor<Real>& grad_logits,
                          const std::vector<BlockTape<Real>>& tapes,
                          const std::vector<Tensor<Real>>& quant_weights);

  /// Smallest distance of any recorded pre-activation in the full chain and
  /// hybrid passes to a non-differentiable point of its activation. Used to
  /// pick generic points for finite-difference checks.
  double min_kink_distance(const DualForwardTrace<Real>& trace) const;

 private:
  Tensor<Real> shape_input(const Tensor<Real>& batch) const;
  std::string layer_name(std::size_t layer) const;
  Tensor<Real> run_block(std::size_t layer, const Tensor<Real>& input,
                         const Tensor<Real>& weight, BatchNormState<Real>& bn,
                         bool training, bool update_stats, int act_bits,
                         BlockTape<Real>* tape);
  Tensor<Real> quant_step(std::size_t layer, const Tensor<Real>& input,
                          const Tensor<Real>& quant_weight, const PassOptions& options,
                          BlockTape<Real>* tape);
  Tensor<Real> backward_through(std::size_t layer, const Tensor<Real>& grad_out,
                                const BlockTape<Real>& tape, const Tensor<Real>& weight,
                                Tensor<Real>* grad_weight);

  ModelSpec spec_;
  QuantSpec quant_;
  std::vector<Block<Real>> blocks_;
};

/// Fraction of samples whose quantized-model argmax equals the label (eval
/// mode, running statistics frozen). Ties go to the lowest class id.
template <std::floating_point Real>
double quantized_eval_accuracy(ShadowModel<Real>& model, const Dataset<Real>& data,
                               std::size_t batch_size = 512);

/// Same measurement for the full-precision model.
template <std::floating_point Real>
double full_eval_accuracy(ShadowModel<Real>& model, const Dataset<Real>& data,
                          std::size_t batch_size = 512);

}  // namespace pdqat

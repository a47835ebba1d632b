// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include "pdqat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string_view>
#include <vector>

#include "pdqat/errors.hpp"

namespace pdqat {

namespace {

constexpr std::string_view kMagic = "PDQAT1";
constexpr std::uint32_t kHasDuals = 1;
constexpr std::uint32_t kHasNormalization = 2;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void size(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) throw InputError(std::string("checkpoint: ") + what + " too large");
    u32(static_cast<std::uint32_t>(v));
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  std::uint8_t u8() {
    need(1, "u8");
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n, "string");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("checkpoint: " + msg + " at byte " + std::to_string(pos_), pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n)
      throw FormatError("checkpoint: truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_),
                        pos_);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

template <std::floating_point Real>
void put_array(Writer& w, const std::string& name, const Tensor<Real>& t) {
  w.size(name.size(), "array name");
  w.bytes(name);
  w.size(t.rank(), "array rank");
  for (std::size_t d : t.shape()) w.size(d, "array dimension");
  for (const Real v : t.data()) w.f32(static_cast<float>(v));
}

std::string prefix(std::size_t layer) { return "L" + std::to_string(layer + 1) + "."; }

}  // namespace

template <std::floating_point Real>
void save_checkpoint(const std::filesystem::path& path, const ShadowModel<Real>& model,
                     const DualState* duals, const Normalization<Real>& normalization,
                     const std::string& config_echo) {
  Writer w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  std::uint32_t flags = 0;
  if (duals) flags |= kHasDuals;
  if (!normalization.empty()) flags |= kHasNormalization;
  w.u32(flags);

  const ModelSpec& spec = model.spec();
  w.size(spec.input_shape.size(), "input rank");
  for (std::size_t d : spec.input_shape) w.size(d, "input dimension");
  w.size(spec.blocks.size(), "layer count");
  for (std::size_t l = 0; l < spec.blocks.size(); ++l) {
    const BlockSpec& b = spec.blocks[l];
    w.u8(static_cast<std::uint8_t>(b.kind));
    w.size(b.units, "units");
    w.size(b.kernel, "kernel");
    w.size(b.stride, "stride");
    w.size(b.padding, "padding");
    w.u8(static_cast<std::uint8_t>(b.activation));
    w.u8(b.batchnorm);
    w.u8(b.bias);
    w.u8(model.quant()[l].enabled);
    w.u32(static_cast<std::uint32_t>(model.quant()[l].bits));
  }

  std::vector<std::pair<std::string, const Tensor<Real>*>> arrays;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Block<Real>& block = model.blocks()[l];
    for (const auto& p : block.params.all()) arrays.emplace_back(prefix(l) + p.name, &p.value);
    if (block.spec.batchnorm) {
      arrays.emplace_back(prefix(l) + "bn_full.mean", &block.bn_full.running_mean);
      arrays.emplace_back(prefix(l) + "bn_full.var", &block.bn_full.running_var);
      arrays.emplace_back(prefix(l) + "bn_quant.mean", &block.bn_quant.running_mean);
      arrays.emplace_back(prefix(l) + "bn_quant.var", &block.bn_quant.running_var);
    }
  }
  Tensor<Real> norm_mean, norm_scale;
  if (!normalization.empty()) {
    norm_mean = Tensor<Real>({normalization.mean.size()}, normalization.mean);
    norm_scale = Tensor<Real>({normalization.scale.size()}, normalization.scale);
    arrays.emplace_back("norm.mean", &norm_mean);
    arrays.emplace_back("norm.scale", &norm_scale);
  }
  w.size(arrays.size(), "array count");
  for (const auto& [name, t] : arrays) put_array(w, name, *t);

  if (duals) {
    const std::size_t C = duals->layer.size();
    w.size(C, "constraint count");
    for (double v : duals->layer) w.f64(v);
    w.f64(duals->out);
    w.f64(duals->dual_lr);
    for (std::size_t l = 0; l < C; ++l) w.u8(l < duals->layer_active.size() && duals->layer_active[l]);
    w.u8(duals->out_active);
    w.size(duals->trajectory.size(), "trajectory length");
    for (const auto& t : duals->trajectory) {
      if (t.layer.size() != C) throw DimensionError("checkpoint: trajectory entry has wrong width");
      for (double v : t.layer) w.f64(v);
      w.f64(t.out);
    }
  }
  w.size(config_echo.size(), "config echo");
  w.bytes(config_echo);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw InputError("checkpoint: write to '" + path.string() + "' failed");
}

template <std::floating_point Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open '" + path.string() + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));

  if (r.bytes(kMagic.size()) != kMagic) throw FormatError("checkpoint: bad magic (expected PDQAT1)", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint: unsupported format version " +
                                      std::to_string(version) + " (this build reads version " +
                                      std::to_string(kCheckpointVersion) + ")",
                                  version);
  }
  const std::uint32_t flags = r.u32();
  if (flags & ~(kHasDuals | kHasNormalization)) r.fail("unknown flag bits");

  ModelSpec spec;
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) r.fail("implausible input rank");
  for (std::uint32_t i = 0; i < rank; ++i) spec.input_shape.push_back(r.u32());
  const std::uint32_t L = r.u32();
  if (L == 0) r.fail("model has no layers");
  std::vector<int> bits(L);
  for (std::uint32_t l = 0; l < L; ++l) {
    BlockSpec b;
    const std::uint8_t kind = r.u8();
    if (kind > 1) r.fail("unknown layer kind");
    b.kind = static_cast<LayerKind>(kind);
    b.units = r.u32();
    b.kernel = r.u32();
    b.stride = r.u32();
    b.padding = r.u32();
    const std::uint8_t act = r.u8();
    if (act > 2) r.fail("unknown activation");
    b.activation = static_cast<Activation>(act);
    b.batchnorm = r.u8() != 0;
    b.bias = r.u8() != 0;
    const bool quantized = r.u8() != 0;
    const std::uint32_t k = r.u32();
    bits[l] = quantized ? static_cast<int>(k) : 0;
    spec.blocks.push_back(b);
  }

  std::optional<ShadowModel<Real>> model;
  try {
    model.emplace(spec, QuantSpec::from_bits(bits), 0);
  } catch (const Error& e) {
    r.fail(std::string("invalid layer table (") + e.what() + ")");
  }

  std::map<std::string, Tensor<Real>*> slots;
  for (std::size_t l = 0; l < model->num_layers(); ++l) {
    Block<Real>& block = model->blocks()[l];
    for (auto& p : block.params.all()) slots[prefix(l) + p.name] = &p.value;
    if (block.spec.batchnorm) {
      slots[prefix(l) + "bn_full.mean"] = &block.bn_full.running_mean;
      slots[prefix(l) + "bn_full.var"] = &block.bn_full.running_var;
      slots[prefix(l) + "bn_quant.mean"] = &block.bn_quant.running_mean;
      slots[prefix(l) + "bn_quant.var"] = &block.bn_quant.running_var;
    }
  }
  Tensor<Real> norm_mean, norm_scale;
  const bool has_norm = flags & kHasNormalization;

  const std::uint32_t count = r.u32();
  std::map<std::string, bool> seen;
  for (std::uint32_t a = 0; a < count; ++a) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t arank = r.u32();
    if (arank == 0 || arank > 8) r.fail("implausible rank for array '" + name + "'");
    Shape shape;
    for (std::uint32_t i = 0; i < arank; ++i) shape.push_back(r.u32());
    Tensor<Real>* target = nullptr;
    if (auto it = slots.find(name); it != slots.end()) {
      target = it->second;
      if (target->shape() != shape) r.fail("array '" + name + "' has shape " + shape_str(shape) +
                                           ", expected " + shape_str(target->shape()));
    } else if (has_norm && (name == "norm.mean" || name == "norm.scale")) {
      if (shape.size() != 1) r.fail("normalization array '" + name + "' must be rank 1");
      target = name == "norm.mean" ? &norm_mean : &norm_scale;
      *target = Tensor<Real>(shape);
    } else {
      r.fail("unexpected array '" + name + "'");
    }
    if (seen[name]) r.fail("duplicate array '" + name + "'");
    seen[name] = true;
    for (auto& v : target->data()) v = static_cast<Real>(r.f32());
  }
  for (const auto& [name, _] : slots)
    if (!seen.count(name)) r.fail("missing array '" + name + "'");

  LoadedCheckpoint<Real> out{std::move(*model), std::nullopt, {}, {}};
  if (has_norm) {
    if (norm_mean.empty() || norm_scale.empty() || norm_mean.size() != norm_scale.size())
      r.fail("incomplete normalization arrays");
    out.normalization.mean.assign(norm_mean.data().begin(), norm_mean.data().end());
    out.normalization.scale.assign(norm_scale.data().begin(), norm_scale.data().end());
  }

  if (flags & kHasDuals) {
    const std::uint32_t C = r.u32();
    if (C != out.model.num_constraints()) r.fail("dual count does not match the layer table");
    DualState d;
    d.layer.resize(C);
    for (auto& v : d.layer) v = r.f64();
    d.out = r.f64();
    d.dual_lr = r.f64();
    d.layer_active.resize(C);
    for (std::uint32_t l = 0; l < C; ++l) d.layer_active[l] = r.u8() != 0;
    d.out_active = r.u8() != 0;
    const std::uint32_t T = r.u32();
    for (std::uint32_t t = 0; t < T; ++t) {
      DualValues v;
      v.layer.resize(C);
      for (auto& x : v.layer) x = r.f64();
      v.out = r.f64();
      d.trajectory.push_back(std::move(v));
    }
    out.duals = std::move(d);
  }
  out.config_echo = r.bytes(r.u32());
  if (!r.done()) r.fail("trailing bytes after config echo");
  return out;
}

template void save_checkpoint(const std::filesystem::path&, const ShadowModel<float>&,
                              const DualState*, const Normalization<float>&, const std::string&);
template void save_checkpoint(const std::filesystem::path&, const ShadowModel<double>&,
                              const DualState*, const Normalization<double>&, const std::string&);
template LoadedCheckpoint<float> load_checkpoint(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint(const std::filesystem::path&);

}  // namespace pdqat

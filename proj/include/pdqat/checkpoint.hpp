// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "pdqat/data.hpp"
#include "pdqat/pdqat.hpp"
#include "pdqat/shadow_model.hpp"

// Binary checkpoint, little-endian throughout:
//
//   "PDQAT1"  u32 version  u32 flags
//   u32 rank, u32 dims[rank]                      input sample shape
//   u32 L, then per layer:
//     u8 kind, u32 units, u32 kernel, u32 stride, u32 padding,
//     u8 activation, u8 batchnorm, u8 bias, u8 quantized, u32 bits
//   u32 count, then per array:
//     u32 name_len, name, u32 rank, u32 dims[rank], f32 payload[numel]
//   [flags & 1] duals: u32 C, f64 lambda[C], f64 lambda_out, f64 dual_lr,
//     u8 active[C], u8 out_active, u32 T, f64 trajectory[T][C + 1]
//   u32 len, config echo bytes
//
// Arrays: "L<i>.weight", "L<i>.bias", "L<i>.bn_gamma", "L<i>.bn_beta",
// "L<i>.bn_full.mean|var", "L<i>.bn_quant.mean|var" (1-based i) and, when
// flags & 2, "norm.mean" / "norm.scale".

namespace pdqat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <std::floating_point Real>
struct LoadedCheckpoint {
  ShadowModel<Real> model;
  std::optional<DualState> duals;
  Normalization<Real> normalization;
  std::string config_echo;
};

/// Writes the model, optional duals and normalization, and a free-form
/// config echo. Values are stored as 32-bit reals.
template <std::floating_point Real>
void save_checkpoint(const std::filesystem::path& path, const ShadowModel<Real>& model,
                     const DualState* duals, const Normalization<Real>& normalization = {},
                     const std::string& config_echo = {});

/// Throws FormatError (with byte offset) on a bad magic, truncation or
/// inconsistent contents, and UnsupportedVersionError on a version mismatch.
template <std::floating_point Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path);

}  // namespace pdqat

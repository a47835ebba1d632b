// Copyright 2026 The pdqat Authors
// Licensed under the Apache License, Version 2.0

#include <gtest/gtest.h>

#include "pdqat/checkpoint.hpp"
#include "pdqat/errors.hpp"
#include "test_util.hpp"

namespace pdqat {
namespace {

using testing::TempDir;
using testing::read_file;
using testing::write_file;

ModelSpec bn_mlp() {
  ModelSpec s;
  s.input_shape = {2};
  for (std::size_t units : {6, 5, 2}) {
    BlockSpec b;
    b.units = units;
    b.activation = units == 2 ? Activation::none : Activation::clip;
    b.batchnorm = units != 2;
    s.blocks.push_back(b);
  }
  return s;
}

// Trains a couple of epochs so running stats and duals are non-trivial.
ShadowModel<float> trained(DualState* duals_out) {
  const auto data = gen_synthetic<float>({.n_per_class = 40, .seed = 3});
  ShadowModel<float> m(bn_mlp(), QuantSpec::from_bits(std::vector<int>{2, 3, 0}), 5);
  TrainRunConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.early_stop = false;
  cfg.constraints = ConstraintSet::defaults_for(m.quant(), 0.2);
  const auto r = train_pdqat(m, cfg, data, static_cast<const Dataset<float>*>(nullptr));
  if (duals_out) *duals_out = r.duals;
  return m;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  DualState duals;
  auto m = trained(&duals);
  Normalization<float> norm{{0.25f, -1.5f}, {2.0f, 0.125f}};
  save_checkpoint(dir / "c.pdqat", m, &duals, norm, "epochs: 2\n");
  const auto back = load_checkpoint<float>(dir / "c.pdqat");

  EXPECT_EQ(back.model.spec(), m.spec());
  EXPECT_EQ(back.model.quant(), m.quant());
  ASSERT_EQ(back.model.blocks().size(), m.blocks().size());
  for (std::size_t l = 0; l < m.blocks().size(); ++l) {
    const auto& a = m.blocks()[l];
    const auto& b = back.model.blocks()[l];
    for (const auto& p : a.params.all()) EXPECT_EQ(b.params.get(p.name).value, p.value) << p.name;
    EXPECT_EQ(a.bn_full.running_mean, b.bn_full.running_mean);
    EXPECT_EQ(a.bn_full.running_var, b.bn_full.running_var);
    EXPECT_EQ(a.bn_quant.running_mean, b.bn_quant.running_mean);
    EXPECT_EQ(a.bn_quant.running_var, b.bn_quant.running_var);
  }
  ASSERT_TRUE(back.duals.has_value());
  EXPECT_EQ(back.duals->values(), duals.values());
  EXPECT_EQ(back.duals->dual_lr, duals.dual_lr);
  EXPECT_EQ(back.duals->layer_active, duals.layer_active);
  EXPECT_EQ(back.duals->trajectory.size(), duals.trajectory.size());
  EXPECT_EQ(back.normalization.mean, norm.mean);
  EXPECT_EQ(back.normalization.scale, norm.scale);
  EXPECT_EQ(back.config_echo, "epochs: 2\n");
}

TEST(Checkpoint, ReloadedModelPredictsTheSame) {
  TempDir dir;
  auto m = trained(nullptr);
  save_checkpoint(dir / "c.pdqat", m, nullptr);
  auto back = load_checkpoint<float>(dir / "c.pdqat");
  EXPECT_FALSE(back.duals.has_value());
  EXPECT_TRUE(back.normalization.empty());
  const auto test = gen_synthetic<float>({.n_per_class = 50, .seed = 8});
  EXPECT_EQ(quantized_eval_accuracy(back.model, test), quantized_eval_accuracy(m, test));
  EXPECT_EQ(full_eval_accuracy(back.model, test), full_eval_accuracy(m, test));
}

TEST(Checkpoint, DoubleModelsStoreSinglePrecision) {
  TempDir dir;
  ShadowModel<double> m(bn_mlp(), QuantSpec::uniform(3, 4), 2);
  save_checkpoint(dir / "d.pdqat", m, nullptr);
  const auto back = load_checkpoint<double>(dir / "d.pdqat");
  const auto& w = m.blocks()[0].params.get("weight").value;
  const auto& v = back.model.blocks()[0].params.get("weight").value;
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_EQ(v[i], double(float(w[i])));
}

class CorruptCheckpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    save_checkpoint(dir / "c.pdqat", trained(nullptr), nullptr);
    bytes = read_file(dir / "c.pdqat");
  }
  TempDir dir;
  std::string bytes;
};

TEST_F(CorruptCheckpoint, BadMagic) {
  bytes.replace(0, 5, "XXXXX");
  write_file(dir / "bad", bytes);
  try {
    load_checkpoint<float>(dir / "bad");
    FAIL() << "expected FormatError";
  } catch (const UnsupportedVersionError&) {
    FAIL() << "magic error reported as a version error";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST_F(CorruptCheckpoint, FutureVersion) {
  bytes[6] = char(kCheckpointVersion + 1);
  write_file(dir / "bad", bytes);
  try {
    load_checkpoint<float>(dir / "bad");
    FAIL() << "expected UnsupportedVersionError";
  } catch (const UnsupportedVersionError& e) {
    EXPECT_EQ(e.found(), kCheckpointVersion + 1);
  }
}

TEST_F(CorruptCheckpoint, EveryTruncationIsAFormatError) {
  for (std::size_t len : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2,
                          bytes.size() - 1}) {
    write_file(dir / "bad", bytes.substr(0, len));
    EXPECT_THROW(load_checkpoint<float>(dir / "bad"), FormatError) << "length " << len;
  }
}

TEST_F(CorruptCheckpoint, TrailingBytes) {
  write_file(dir / "bad", bytes + "x");
  EXPECT_THROW(load_checkpoint<float>(dir / "bad"), FormatError);
}

TEST(Checkpoint, MissingFileIsInputError) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint<float>(dir / "absent.pdqat"), InputError);
}

}  // namespace
}  // namespace pdqat

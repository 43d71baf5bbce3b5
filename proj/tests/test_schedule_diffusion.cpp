// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "nefic/diffusion.hpp"
#include "nefic/schedule.hpp"
#include "test_util.hpp"

namespace nefic {
namespace {

TEST(Schedule, CosineEndpoints) {
  NoiseSchedule s = make_schedule(1000);
  EXPECT_DOUBLE_EQ(s.alpha[0], 1.0);
  EXPECT_DOUBLE_EQ(s.sigma[0], 0.0);
  EXPECT_NEAR(s.alpha[1000], 0.0, 1e-12);
  EXPECT_NEAR(s.sigma[1000], 1.0, 1e-12);
}

TEST(Schedule, MidpointBalancesSignalAndNoise) {
  NoiseSchedule s = make_schedule(1000);
  EXPECT_NEAR(s.alpha[500], std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(s.alpha[500] - s.sigma[500], 0.0, 1e-12);
  EXPECT_NEAR(s.alpha[500], 0.70711, 1e-5);
}

TEST(Schedule, UnitEnergyIdentityOnFullGrid) {
  NoiseSchedule s = make_schedule(1000);
  double worst = 0.0;
  for (int t = 0; t <= 1000; ++t) {
    const double r =
        s.alpha[size_t(t)] * s.alpha[size_t(t)] +
        s.sigma[size_t(t)] * s.sigma[size_t(t)];
    worst = std::max(worst, std::abs(r - 1.0));
  }
  EXPECT_LE(worst, 1e-12);
  for (int t = 1; t <= 1000; ++t)
    ASSERT_LE(s.alpha[size_t(t)], s.alpha[size_t(t - 1)]);
}

TEST(Schedule, RejectsUnknownKindAndBadT) {
  EXPECT_THROW(make_schedule(1000, "linear"), ConfigError);
  EXPECT_THROW(make_schedule(0), ConfigError);
}

TEST(AddNoise, EndpointIdentities) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(1);
  Var<double> z0 = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  Var<double> eps = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  Tensor<double> at0 = add_noise(z0, 0, eps, s).value();
  Tensor<double> atT = add_noise(z0, 1000, eps, s).value();
  for (int64_t i = 0; i < at0.numel(); ++i) {
    ASSERT_EQ(at0[i], z0.value()[i]);
    ASSERT_NEAR(atT[i], eps.value()[i], 1e-12);
  }
}

TEST(AddNoise, RejectsShapeMismatchAndBadT) {
  NoiseSchedule s = make_schedule(1000);
  Var<double> z0 = constant(Tensor<double>::zeros({1, 8, 4, 4}));
  Var<double> eps = constant(Tensor<double>::zeros({1, 8, 2, 2}));
  EXPECT_THROW(add_noise(z0, 10, eps, s), ShapeError);
  Var<double> ok = constant(Tensor<double>::zeros({1, 8, 4, 4}));
  EXPECT_THROW(add_noise(z0, 1001, ok, s), ConfigError);
  EXPECT_THROW(add_noise(z0, -1, ok, s), ConfigError);
}

TEST(AddNoise, SecondMomentMonteCarlo) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(7);
  Tensor<double> z0t = Tensor<double>::randn({1, 8, 8, 8}, rng);
  Var<double> z0 = constant(z0t.clone());
  const int t = 300;
  const double n = double(z0t.numel());
  double z0_sq = 0;
  for (int64_t i = 0; i < z0t.numel(); ++i) z0_sq += z0t[i] * z0t[i];
  const double expect = s.alpha[t] * s.alpha[t] * z0_sq +
                        s.sigma[t] * s.sigma[t] * n;
  double acc = 0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Tensor<double> e = Tensor<double>::randn(z0t.shape(), rng);
    const double a = s.alpha[t], g = s.sigma[t];
    for (int64_t i = 0; i < e.numel(); ++i) {
      const double v = a * z0t[i] + g * e[i];
      acc += v * v;
    }
  }
  acc /= draws;
  EXPECT_NEAR(acc, expect, 0.03 * expect);
}

TEST(PredictZ0, RecoversCleanLatentFromTrueV) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int t = int(rng.uniform_int(0, 1000));
    Var<double> z0 = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
    Var<double> eps = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
    Var<double> zt = add_noise(z0, t, eps, s);
    Var<double> v = target_v(z0, eps, t, s);
    Tensor<double> back = predict_z0(zt, v, t, s).value();
    for (int64_t i = 0; i < back.numel(); ++i) {
      const double ref = std::max(1e-9, std::abs(z0.value()[i]));
      worst = std::max(worst, std::abs(back[i] - z0.value()[i]) / ref);
    }
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(PredictZ0, DirectSubstitutionAtMidpoint) {
  NoiseSchedule s = make_schedule(1000);
  Var<double> zt = constant(Tensor<double>::zeros({1, 8, 2, 2}));
  Var<double> v = constant(Tensor<double>::ones({1, 8, 2, 2}));
  Tensor<double> z0 = predict_z0(zt, v, 500, s).value();
  for (int64_t i = 0; i < z0.numel(); ++i) ASSERT_NEAR(z0[i], -0.70711, 1e-5);
}

TEST(PredictZ0, IdentityAtTZero) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(5);
  Var<double> zt = constant(Tensor<double>::randn({1, 8, 2, 2}, rng));
  Var<double> v = constant(Tensor<double>::randn({1, 8, 2, 2}, rng));
  Tensor<double> z0 = predict_z0(zt, v, 0, s).value();
  for (int64_t i = 0; i < z0.numel(); ++i) ASSERT_EQ(z0[i], zt.value()[i]);
}

TEST(TargetV, MatchesDefinition) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(6);
  Var<double> z0 = constant(Tensor<double>::randn({2, 3}, rng));
  Var<double> eps = constant(Tensor<double>::randn({2, 3}, rng));
  const int t = 321;
  Tensor<double> v = target_v(z0, eps, t, s).value();
  for (int64_t i = 0; i < v.numel(); ++i)
    ASSERT_NEAR(v[i],
                s.alpha[t] * eps.value()[i] - s.sigma[t] * z0.value()[i],
                1e-15);
}

TEST(Sampler, DeterministicUnderSeed) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(8);
  DiT<float> dit(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  Tensor<float> a = sample_multistep(dit, za, s, 4, 42).value().clone();
  Tensor<float> b = sample_multistep(dit, za, s, 4, 42).value();
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
  Tensor<float> c = sample_multistep(dit, za, s, 4, 43).value();
  double diff = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    diff = std::max(diff, std::abs(double(a[i] - c[i])));
  EXPECT_GT(diff, 0.0);
}

TEST(Sampler, SingleStepIsOnePredictZ0AtT) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(9);
  DiT<float> dit(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  const uint64_t seed = 1234;
  Tensor<float> out = sample_multistep(dit, za, s, 1, seed).value().clone();
  // Reproduce by hand: the initial draw comes from Rng(seed), then one
  // v evaluation at t = T and the clean-latent reconstruction.
  Rng r2(seed);
  Var<float> zT = constant(Tensor<float>::randn({1, 8, 8, 8}, r2));
  Var<float> v = dit.forward(za, zT, 1000);
  Tensor<float> want = predict_z0(zT, v, 1000, s).value();
  for (int64_t i = 0; i < out.numel(); ++i) ASSERT_EQ(out[i], want[i]);
}

TEST(Sampler, StepCountsOutsideRangeAreRejected) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(10);
  DiT<float> dit(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  EXPECT_THROW(sample_multistep(dit, za, s, 0, 1), ConfigError);
  EXPECT_THROW(sample_multistep(dit, za, s, 1001, 1), ConfigError);
}

TEST(Sampler, BackboneEvaluationsEqualStepCount) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(11);
  DiT<float> dit(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  dit.reset_forward_count();
  sample_multistep(dit, za, s, 7, 5);
  EXPECT_EQ(dit.forward_count(), 7);
}

TEST(DecodeOneStep, StubbedAlgebraIdentities) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(12);
  Var<double> zb = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  // A backbone that returns v = 0 reduces the decode to alpha_500 * z_bypass.
  Var<double> zero_v = constant(Tensor<double>::zeros({1, 8, 4, 4}));
  Tensor<double> out = predict_z0(zb, zero_v, 500, s).value();
  for (int64_t i = 0; i < out.numel(); ++i)
    ASSERT_NEAR(out[i], 0.7071067811865476 * zb.value()[i], 1e-12);
  // A backbone that returns the true v for a known clean latent recovers it.
  Var<double> z0 = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  Var<double> eps = constant(Tensor<double>::randn({1, 8, 4, 4}, rng));
  Var<double> zt = add_noise(z0, 500, eps, s);
  Var<double> vstar = target_v(z0, eps, 500, s);
  Tensor<double> rec = predict_z0(zt, vstar, 500, s).value();
  for (int64_t i = 0; i < rec.numel(); ++i)
    ASSERT_NEAR(rec[i], z0.value()[i], 1e-12);
}

TEST(DecodeOneStep, ExactlyOneBackboneForward) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(13);
  DiT<float> dit(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  Var<float> zb = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  dit.reset_forward_count();
  Var<float> z0 = decode_one_step(dit, za, zb, s);
  EXPECT_EQ(dit.forward_count(), 1);
  EXPECT_EQ(shape_str(z0.shape()), "[1x8x8x8]");
  // Deterministic: no sampling happens anywhere in the one-step path.
  Tensor<float> again = decode_one_step(dit, za, zb, s).value();
  for (int64_t i = 0; i < again.numel(); ++i)
    ASSERT_EQ(again[i], z0.value()[i]);
}

TEST(DecodeOneStep, RefinerPlumbing) {
  NoiseSchedule s = make_schedule(1000);
  Rng rng(14);
  DiT<float> dit(rng);
  BypassRefiner<float> refiner(rng);
  Var<float> za = constant(Tensor<float>::randn({1, 8, 8, 8}, rng));
  Var<float> h_dec = constant(Tensor<float>::randn({1, 96, 8, 8}, rng));
  Var<float> zb = refiner.forward(h_dec);
  Var<float> z0 = decode_one_step(dit, za, zb, s);
  EXPECT_TRUE(z0.value().all_finite());
  EXPECT_EQ(shape_str(z0.shape()), "[1x8x8x8]");
}

}  // namespace
}  // namespace nefic

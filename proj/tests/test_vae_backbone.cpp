// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "nefic/vae.hpp"
#include "test_util.hpp"

namespace nefic {
namespace {

// Structured test image: diagonal gradient with a checker overlay, so that
// blurring genuinely destroys detail.
template <class S>
Tensor<S> make_image(int64_t n, int64_t h, int64_t w, uint64_t seed = 7) {
  Rng rng(seed);
  Tensor<S> x({n, 3, h, w});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t r = 0; r < h; ++r)
        for (int64_t q = 0; q < w; ++q) {
          const double grad = double(r + q) / double(h + w - 2);
          const double check = ((r / 4 + q / 4) % 2 == 0) ? 0.25 : -0.25;
          const double v = 0.5 * grad + 0.5 * (0.5 + check) +
                           0.02 * rng.uniform(-1.0, 1.0) + 0.05 * double(c);
          x.at(s, c, r, q) = S(std::min(1.0, std::max(0.0, v)));
        }
  return x;
}

template <class S>
Tensor<S> box_blur(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                W = x.shape()[3];
  for (int64_t s = 0; s < N; ++s)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t r = 0; r < H; ++r)
        for (int64_t q = 0; q < W; ++q) {
          double acc = 0.0;
          int cnt = 0;
          for (int64_t dr = -1; dr <= 1; ++dr)
            for (int64_t dq = -1; dq <= 1; ++dq) {
              const int64_t rr = r + dr, qq = q + dq;
              if (rr < 0 || rr >= H || qq < 0 || qq >= W) continue;
              acc += double(x.at(s, c, rr, qq));
              ++cnt;
            }
          y.at(s, c, r, q) = S(acc / cnt);
        }
  return y;
}

TEST(ToyVae, EncodeDecodeShapes) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 64, 64));
  Var<float> z = vae.encode(x);
  ASSERT_EQ(shape_str(z.shape()), "[1x8x8x8]");
  Var<float> xr = vae.decode(z);
  ASSERT_EQ(shape_str(xr.shape()), "[1x3x64x64]");
}

TEST(ToyVae, RejectsNonDivisibleDims) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 60, 64));
  EXPECT_THROW(vae.encode(x), ShapeError);
}

TEST(ToyVae, DecodeRejectsWrongChannelCount) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Var<float> z = constant(Tensor<float>::zeros({1, 4, 8, 8}));
  EXPECT_THROW(vae.decode(z), ShapeError);
}

TEST(ToyVae, EncodeIsDeterministic) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 64, 64));
  Tensor<float> z1 = vae.encode(x).value();
  Tensor<float> z2 = vae.encode(x).value();
  for (int64_t i = 0; i < z1.numel(); ++i) ASSERT_EQ(z1[i], z2[i]);
}

TEST(ToyVae, BatchedEncodeMatchesSeparateEncodes) {
  Rng rng(3);
  ToyVae<float> vae(rng);
  Tensor<float> pair = make_image<float>(2, 32, 32);
  Var<float> zb = vae.encode(constant(pair.clone()));
  for (int64_t s = 0; s < 2; ++s) {
    Tensor<float> one({1, 3, 32, 32});
    std::copy_n(pair.data() + s * 3 * 32 * 32, 3 * 32 * 32, one.data());
    Tensor<float> zs = vae.encode(constant(std::move(one))).value();
    for (int64_t i = 0; i < zs.numel(); ++i)
      ASSERT_NEAR(zb.value()[s * zs.numel() + i], zs[i], 1e-5f);
  }
}

TEST(ToyVae, AllZeroLatentDecodesFiniteInRange) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Var<float> z = constant(Tensor<float>::zeros({1, 8, 8, 8}));
  Tensor<float> x = vae.decode(z).value();
  ASSERT_TRUE(x.all_finite());
  for (int64_t i = 0; i < x.numel(); ++i) {
    ASSERT_GE(x[i], 0.0f);
    ASSERT_LE(x[i], 1.0f);
  }
}

TEST(ToyVae, DecodeUndoesNormalization) {
  Rng rng(5);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 32, 32));
  Tensor<float> base = vae.decode(vae.encode(x)).value();
  Tensor<float> mean({8}), std({8});
  Rng r2(11);
  for (int64_t c = 0; c < 8; ++c) {
    mean[c] = float(r2.uniform(-0.5, 0.5));
    std[c] = float(r2.uniform(0.5, 2.0));
  }
  vae.set_normalization(mean, std);
  Tensor<float> renorm = vae.decode(vae.encode(x)).value();
  nefic_test::expect_tensor_near(renorm.cast<double>(), base.cast<double>(),
                                 1e-4);
}

TEST(ToyVae, RejectsNonPositiveStd) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  Tensor<float> mean({8}), std({8});
  std.fill(1.0f);
  std[3] = 0.0f;
  EXPECT_THROW(vae.set_normalization(mean, std), ConfigError);
}

TEST(ToyVae, ParamStoreCoversEncoderAndDecoder) {
  Rng rng(1);
  ToyVae<float> vae(rng);
  ParamStore<float> ps;
  vae.register_params(ps);
  EXPECT_NE(ps.find("vae.enc1.w"), nullptr);
  EXPECT_NE(ps.find("vae.dec_head.b"), nullptr);
  EXPECT_NE(ps.find("vae.norm_mean"), nullptr);
  EXPECT_GT(ps.numel_total(), 100000);
  // Normalization buffers are statistics, not trainable weights.
  EXPECT_FALSE(ps.find("vae.norm_mean")->requires_grad());
}

TEST(ToyVae, ReconstructionGradientsReachEncoder) {
  Rng rng(9);
  ToyVae<double> vae(rng);
  ParamStore<double> ps;
  vae.register_params(ps);
  Var<double> x = constant(make_image<double>(1, 16, 16));
  Var<double> loss = mse(vae.decode_raw(vae.encode_raw(x)), x);
  backward(loss);
  Var<double>* w = ps.find("vae.enc1.w");
  ASSERT_TRUE(w->has_grad());
  EXPECT_GT(w->grad().abs_max(), 0.0);
  EXPECT_TRUE(w->grad().all_finite());
}

TEST(PerceptualProxy, ZeroOnIdenticalInputs) {
  Rng rng(2);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 32, 32));
  EXPECT_EQ(perceptual_proxy(vae, x, x).item(), 0.0f);
}

TEST(PerceptualProxy, Symmetric) {
  Rng rng(2);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 32, 32, 1));
  Var<float> y = constant(make_image<float>(1, 32, 32, 2));
  EXPECT_FLOAT_EQ(perceptual_proxy(vae, x, y).item(),
                  perceptual_proxy(vae, y, x).item());
}

TEST(PerceptualProxy, RejectsShapeMismatch) {
  Rng rng(2);
  ToyVae<float> vae(rng);
  Var<float> x = constant(make_image<float>(1, 32, 32));
  Var<float> y = constant(make_image<float>(1, 64, 64));
  EXPECT_THROW(perceptual_proxy(vae, x, y), ShapeError);
}

TEST(PerceptualProxy, BlurHurtsMoreThanTinyNoise) {
  Rng rng(2);
  ToyVae<float> vae(rng);
  Tensor<float> img = make_image<float>(1, 64, 64);
  Tensor<float> blurred = box_blur(img);
  Rng nrng(77);
  Tensor<float> noisy = img.clone();
  for (auto& v : noisy) v += float(nrng.normal() * 1e-3);
  Var<float> x = constant(img.clone());
  const float d_blur = perceptual_proxy(vae, x, constant(std::move(blurred))).item();
  const float d_noise = perceptual_proxy(vae, x, constant(std::move(noisy))).item();
  EXPECT_GT(d_blur, d_noise);
  EXPECT_GT(d_blur, 0.0f);
}

}  // namespace
}  // namespace nefic

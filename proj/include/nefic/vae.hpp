// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-frame image autoencoder mapping RGB images to 1/8-scale latent grids
// and back.  It is pretrained once on the image corpus and frozen for all
// later work; its encoder doubles as the feature extractor for the
// perceptual proxy metric and the adversarial head.

#pragma once

#include <string>
#include <vector>

#include "nefic/autograd.hpp"
#include "nefic/nn.hpp"
#include "nefic/ops.hpp"

namespace nefic {

inline constexpr int64_t kLatentChannels = 8;  // C_z
inline constexpr int64_t kLatentStride = 8;    // spatial reduction factor

template <class S>
class ToyVae {
 public:
  ToyVae() = default;

  explicit ToyVae(Rng& rng) {
    enc1_ = Conv2dLayer<S>(3, 32, 3, 2, 1, rng);
    enc1b_ = Conv2dLayer<S>(32, 32, 3, 1, 1, rng);
    enc2_ = Conv2dLayer<S>(32, 64, 3, 2, 1, rng);
    enc2b_ = Conv2dLayer<S>(64, 64, 3, 1, 1, rng);
    enc3_ = Conv2dLayer<S>(64, 96, 3, 2, 1, rng);
    enc_head_ = Conv2dLayer<S>(96, kLatentChannels, 3, 1, 1, rng);
    dec_in_ = Conv2dLayer<S>(kLatentChannels, 96, 3, 1, 1, rng);
    dec3_ = Conv2dLayer<S>(96, 64, 3, 1, 1, rng);
    dec2b_ = Conv2dLayer<S>(64, 64, 3, 1, 1, rng);
    dec2_ = Conv2dLayer<S>(64, 32, 3, 1, 1, rng);
    dec1b_ = Conv2dLayer<S>(32, 32, 3, 1, 1, rng);
    dec_head_ = Conv2dLayer<S>(32, 3, 3, 1, 1, rng);
    norm_mean_ = Var<S>::leaf(Tensor<S>::zeros({kLatentChannels}), false);
    norm_std_ = Var<S>::leaf(Tensor<S>::ones({kLatentChannels}), false);
  }

  void register_params(ParamStore<S>& ps) {
    enc1_.register_params(ps, "vae.enc1");
    enc1b_.register_params(ps, "vae.enc1b");
    enc2_.register_params(ps, "vae.enc2");
    enc2b_.register_params(ps, "vae.enc2b");
    enc3_.register_params(ps, "vae.enc3");
    enc_head_.register_params(ps, "vae.enc_head");
    dec_in_.register_params(ps, "vae.dec_in");
    dec3_.register_params(ps, "vae.dec3");
    dec2b_.register_params(ps, "vae.dec2b");
    dec2_.register_params(ps, "vae.dec2");
    dec1b_.register_params(ps, "vae.dec1b");
    dec_head_.register_params(ps, "vae.dec_head");
    ps.add("vae.norm_mean", &norm_mean_);
    ps.add("vae.norm_std", &norm_std_);
  }

  // Intermediate encoder activations, used by the perceptual proxy and the
  // adversarial head.  Stages: 32ch @ 1/2, 64ch @ 1/4, 96ch @ 1/8.
  std::vector<Var<S>> encoder_features(const Var<S>& x) const {
    check_image(x);
    Var<S> f1 = silu(enc1b_.forward(silu(enc1_.forward(x))));
    Var<S> f2 = silu(enc2b_.forward(silu(enc2_.forward(f1))));
    Var<S> f3 = silu(enc3_.forward(f2));
    return {f1, f2, f3};
  }

  // Deterministic encoding: posterior mean, normalized per channel with the
  // statistics captured after pretraining.
  Var<S> encode(const Var<S>& x) const {
    Var<S> raw = encode_raw(x);
    const int64_t N = raw.shape()[0], H = raw.shape()[2], W = raw.shape()[3];
    Var<S> mu = broadcast_channels(norm_mean_, N, H, W);
    Var<S> sd = broadcast_channels(norm_std_, N, H, W);
    return divide(sub(raw, mu), sd);
  }

  // Decoding denormalizes and clamps into displayable range.
  Var<S> decode(const Var<S>& z) const {
    return clamp01(decode_raw(z));
  }

  // Un-normalized encoder output (pretraining operates on this directly).
  Var<S> encode_raw(const Var<S>& x) const {
    std::vector<Var<S>> f = encoder_features(x);
    return enc_head_.forward(f[2]);
  }

  // Un-clamped decoder output (pretraining trains on this so gradients do
  // not die at the range boundary).
  Var<S> decode_raw(const Var<S>& z) const {
    NEFIC_CHECK(z.shape().size() == 4 && z.shape()[1] == kLatentChannels,
                ShapeError, "vae decode expects ", kLatentChannels,
                " latent channels, got ", shape_str(z.shape()));
    const int64_t N = z.shape()[0], H = z.shape()[2], W = z.shape()[3];
    Var<S> mu = broadcast_channels(norm_mean_, N, H, W);
    Var<S> sd = broadcast_channels(norm_std_, N, H, W);
    Var<S> raw = add(mul(z, sd), mu);
    Var<S> h = silu(dec_in_.forward(raw));
    h = silu(dec3_.forward(upsample_nearest2x(h)));
    h = silu(dec2b_.forward(h));
    h = silu(dec2_.forward(upsample_nearest2x(h)));
    h = silu(dec1b_.forward(h));
    return dec_head_.forward(upsample_nearest2x(h));
  }

  // Installs the per-channel latent statistics measured after pretraining.
  void set_normalization(const Tensor<S>& mean, const Tensor<S>& std) {
    NEFIC_CHECK(mean.numel() == kLatentChannels &&
                    std.numel() == kLatentChannels,
                ShapeError, "normalization stats need ", kLatentChannels,
                " channels");
    for (int64_t c = 0; c < kLatentChannels; ++c)
      NEFIC_CHECK(std[c] > S(0), ConfigError,
                  "non-positive latent std in channel ", c);
    norm_mean_.value() = mean.clone();
    norm_std_.value() = std.clone();
  }

  const Var<S>& norm_mean() const { return norm_mean_; }
  const Var<S>& norm_std() const { return norm_std_; }

 private:
  static void check_image(const Var<S>& x) {
    NEFIC_CHECK(x.shape().size() == 4 && x.shape()[1] == 3, ShapeError,
                "vae expects NCHW rgb input, got ", shape_str(x.shape()));
    NEFIC_CHECK(x.shape()[2] % kLatentStride == 0 &&
                    x.shape()[3] % kLatentStride == 0,
                ShapeError, "image dims must be divisible by ", kLatentStride,
                ", got ", shape_str(x.shape()));
  }

  Conv2dLayer<S> enc1_, enc1b_, enc2_, enc2b_, enc3_, enc_head_;
  Conv2dLayer<S> dec_in_, dec3_, dec2b_, dec2_, dec1b_, dec_head_;
  Var<S> norm_mean_, norm_std_;
};

// Mean squared distance between frozen encoder features of two images,
// averaged over the encoder stages.  Deterministic, symmetric, and zero
// exactly when the features agree.
template <class S>
Var<S> perceptual_proxy(const ToyVae<S>& vae, const Var<S>& x,
                        const Var<S>& y) {
  NEFIC_CHECK(same_shape(x.value(), y.value()), ShapeError,
              "perceptual proxy: ", shape_str(x.shape()), " vs ",
              shape_str(y.shape()));
  std::vector<Var<S>> fx = vae.encoder_features(x);
  std::vector<Var<S>> fy = vae.encoder_features(y);
  Var<S> total;
  for (size_t i = 0; i < fx.size(); ++i) {
    Var<S> d = mse(fx[i], fy[i]);
    total = total.defined() ? add(total, d) : d;
  }
  return mul_scalar(total, S(1) / S(fx.size()));
}

}  // namespace nefic

// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
//
// Conditional anchor codec: a strided-conv transform coder with a scale
// hyperprior.  The analysis path exposes a 1/8-scale feature tap (h_enc)
// that is fused with the image latent as conditioning, and the synthesis
// path exposes the mirrored tap (h_dec) consumed by the bypass refiner.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nefic/autograd.hpp"
#include "nefic/bitstream.hpp"
#include "nefic/nn.hpp"
#include "nefic/ops.hpp"
#include "nefic/vae.hpp"

namespace nefic {

inline constexpr int64_t kCodecLatentChannels = 128;  // C_y, at 1/16 scale
inline constexpr int64_t kCodecHyperChannels = 64;    // C_h, at 1/64 scale
inline constexpr int64_t kCodecFeatChannels = 96;     // C_f, the 1/8 taps
inline constexpr double kScaleMin = 0.11;

// Symbol supports for the range-coded payloads.  Trained latents live well
// inside these; a symbol outside is reported as a coding error.
inline constexpr int kLatentSymMin = -63;
inline constexpr int kLatentSymMax = 64;
inline constexpr int kHyperSymMin = -127;
inline constexpr int kHyperSymMax = 128;

enum class QuantizeMode { kNoise, kRound, kSte };

// Quantization proxies: additive uniform noise (rate path), hard rounding
// with ties to even (inference), and rounding with a straight-through
// gradient (reconstruction path).
template <class S>
Var<S> quantize(const Var<S>& v, QuantizeMode mode,
                const Tensor<S>* noise = nullptr) {
  switch (mode) {
    case QuantizeMode::kNoise: {
      NEFIC_CHECK(noise != nullptr && same_shape(*noise, v.value()),
                  ShapeError, "noise quantization needs a matching noise grid");
      return add(v, constant(noise->clone()));
    }
    case QuantizeMode::kRound: {
      Tensor<S> out(v.shape());
      const S* p = v.value().data();
      for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = S(std::nearbyint(double(p[i])));
      return Var<S>::leaf(std::move(out), false);
    }
    case QuantizeMode::kSte:
      return round_ste(v);
  }
  throw ConfigError("unknown quantization mode");
}

// Differentiable coded-length estimate in bits: each value is scored by the
// Gaussian mass of its unit-width quantization interval.
template <class S>
Var<S> estimate_rate(const Var<S>& values, const Var<S>& mean,
                     const Var<S>& scale) {
  NEFIC_CHECK(same_shape(values.value(), mean.value()) &&
                  same_shape(values.value(), scale.value()),
              ShapeError, "estimate_rate: mismatched grids");
  const S inv_sqrt2 = S(1) / S(std::sqrt(2.0));
  auto gauss_cdf = [&](const Var<S>& t) {
    return add_scalar(mul_scalar(erf_op(mul_scalar(t, inv_sqrt2)), S(0.5)),
                      S(0.5));
  };
  Var<S> centered = sub(values, mean);
  Var<S> upper = divide(add_scalar(centered, S(0.5)), scale);
  Var<S> lower = divide(add_scalar(centered, S(-0.5)), scale);
  Var<S> p = clamp_min(sub(gauss_cdf(upper), gauss_cdf(lower)), S(1e-12));
  const S inv_ln2 = S(1.0 / std::log(2.0));
  return neg(mul_scalar(sum_all(log_op(p)), inv_ln2));
}

template <class S>
struct AnchorAnalysisOut {
  Var<S> y;      // [N, C_y, H/16, W/16]
  Var<S> h_enc;  // [N, C_f, H/8, W/8]
};

template <class S>
struct AnchorSynthesisOut {
  Var<S> x_anchor;  // [N, 3, H, W], clamped to [0,1]
  Var<S> x_raw;     // same, before clamping (training target surface)
  Var<S> h_dec;     // [N, C_f, H/8, W/8]
};

template <class S>
struct HyperParamsOut {
  Var<S> mean;   // [N, C_y, H/16, W/16]
  Var<S> scale;  // same, >= kScaleMin
};

// Everything the training losses need from one conditional codec forward:
// uniform-noise surrogates feed the rate terms while straight-through
// rounding feeds the reconstruction, for both latent and hyper latent.
template <class S>
struct AnchorForward {
  Var<S> y, h;
  Var<S> y_rec, h_rec;    // straight-through rounded
  Var<S> mean, scale;     // hyper-synthesized Gaussian parameters for y
  Var<S> bits_y, bits_h;  // scalar rate estimates (bits)
  Var<S> h_enc;
  AnchorSynthesisOut<S> syn;
};

template <class S>
class AnchorCodec {
 public:
  AnchorCodec() = default;

  explicit AnchorCodec(Rng& rng) {
    ga1_ = Conv2dLayer<S>(3, 64, 3, 2, 1, rng);
    ga2_ = Conv2dLayer<S>(64, 96, 3, 2, 1, rng);
    ga3_ = Conv2dLayer<S>(96, 128, 3, 2, 1, rng);
    tap_ = Conv2dLayer<S>(128, kCodecFeatChannels, 1, 1, 0, rng);
    ga4_ = Conv2dLayer<S>(kCodecFeatChannels + kLatentChannels,
                          kCodecLatentChannels, 3, 2, 1, rng);
    gs4_ = Conv2dLayer<S>(kCodecLatentChannels, 128, 3, 1, 1, rng);
    gs3_ = Conv2dLayer<S>(128, kCodecFeatChannels, 3, 1, 1, rng);
    gs2_ = Conv2dLayer<S>(kCodecFeatChannels, 64, 3, 1, 1, rng);
    gs1_ = Conv2dLayer<S>(64, 32, 3, 1, 1, rng);
    gs0_ = Conv2dLayer<S>(32, 3, 3, 1, 1, rng);
    ha1_ = Conv2dLayer<S>(kCodecLatentChannels, 96, 3, 2, 1, rng);
    ha2_ = Conv2dLayer<S>(96, kCodecHyperChannels, 3, 2, 1, rng);
    hs1_ = Conv2dLayer<S>(kCodecHyperChannels, 96, 3, 1, 1, rng);
    hs2_ = Conv2dLayer<S>(96, 128, 3, 1, 1, rng);
    hs3_ = Conv2dLayer<S>(128, 2 * kCodecLatentChannels, 3, 1, 1, rng);
    prior_mean_ =
        Var<S>::leaf(Tensor<S>::zeros({kCodecHyperChannels}), true);
    // softplus(0.55) ~= 1.0, a sane starting width for the hyper prior.
    prior_rawscale_ = Var<S>::leaf(
        Tensor<S>::full({kCodecHyperChannels}, S(0.55)), true);
  }

  void register_params(ParamStore<S>& ps) {
    ga1_.register_params(ps, "codec.ga1");
    ga2_.register_params(ps, "codec.ga2");
    ga3_.register_params(ps, "codec.ga3");
    tap_.register_params(ps, "codec.tap");
    ga4_.register_params(ps, "codec.ga4");
    gs4_.register_params(ps, "codec.gs4");
    gs3_.register_params(ps, "codec.gs3");
    gs2_.register_params(ps, "codec.gs2");
    gs1_.register_params(ps, "codec.gs1");
    gs0_.register_params(ps, "codec.gs0");
    ha1_.register_params(ps, "codec.ha1");
    ha2_.register_params(ps, "codec.ha2");
    hs1_.register_params(ps, "codec.hs1");
    hs2_.register_params(ps, "codec.hs2");
    hs3_.register_params(ps, "codec.hs3");
    ps.add("codec.prior_mean", &prior_mean_);
    ps.add("codec.prior_rawscale", &prior_rawscale_);
  }

  // Analysis transform.  `z0` is the 1/8-scale image latent used as
  // conditioning; when absent (unconditional ablation) a zero grid of the
  // same channel count takes its place, so parameter shapes never change.
  AnchorAnalysisOut<S> analysis(const Var<S>& x,
                                const std::optional<Var<S>>& z0) const {
    NEFIC_CHECK(x.shape().size() == 4 && x.shape()[1] == 3, ShapeError,
                "anchor analysis expects NCHW rgb, got ", shape_str(x.shape()));
    NEFIC_CHECK(x.shape()[2] % 16 == 0 && x.shape()[3] % 16 == 0, ShapeError,
                "anchor analysis needs dims divisible by 16, got ",
                shape_str(x.shape()));
    Var<S> u = silu(ga1_.forward(x));
    u = silu(ga2_.forward(u));
    u = silu(ga3_.forward(u));
    Var<S> h_enc = tap_.forward(u);
    Var<S> cond;
    if (z0.has_value()) {
      NEFIC_CHECK(z0->shape().size() == 4 &&
                      z0->shape()[1] == kLatentChannels &&
                      z0->shape()[2] == h_enc.shape()[2] &&
                      z0->shape()[3] == h_enc.shape()[3],
                  ShapeError, "conditioning latent ", shape_str(z0->shape()),
                  " does not match tap ", shape_str(h_enc.shape()));
      cond = *z0;
    } else {
      cond = constant(Tensor<S>::zeros({h_enc.shape()[0], kLatentChannels,
                                        h_enc.shape()[2], h_enc.shape()[3]}));
    }
    Var<S> y = ga4_.forward(concat_channels(h_enc, cond));
    return {y, h_enc};
  }

  AnchorSynthesisOut<S> synthesis(const Var<S>& y_q) const {
    NEFIC_CHECK(y_q.shape().size() == 4 &&
                    y_q.shape()[1] == kCodecLatentChannels,
                ShapeError, "anchor synthesis expects ", kCodecLatentChannels,
                " channels, got ", shape_str(y_q.shape()));
    Var<S> u = silu(gs4_.forward(y_q));
    Var<S> h_dec = silu(gs3_.forward(upsample_nearest2x(u)));
    u = silu(gs2_.forward(upsample_nearest2x(h_dec)));
    u = silu(gs1_.forward(upsample_nearest2x(u)));
    Var<S> x_raw = gs0_.forward(upsample_nearest2x(u));
    return {clamp01(x_raw), x_raw, h_dec};
  }

  Var<S> hyper_analysis(const Var<S>& y) const {
    NEFIC_CHECK(y.shape()[2] % 4 == 0 && y.shape()[3] % 4 == 0, ShapeError,
                "hyper analysis needs latent dims divisible by 4, got ",
                shape_str(y.shape()));
    return ha2_.forward(silu(ha1_.forward(y)));
  }

  HyperParamsOut<S> hyper_synthesis(const Var<S>& h_q) const {
    NEFIC_CHECK(h_q.shape().size() == 4 &&
                    h_q.shape()[1] == kCodecHyperChannels,
                ShapeError, "hyper synthesis expects ", kCodecHyperChannels,
                " channels, got ", shape_str(h_q.shape()));
    Var<S> u = silu(hs1_.forward(h_q));
    u = silu(hs2_.forward(upsample_nearest2x(u)));
    Var<S> ms = hs3_.forward(upsample_nearest2x(u));
    Var<S> mean = slice_channels(ms, 0, kCodecLatentChannels);
    Var<S> raw = slice_channels(ms, kCodecLatentChannels,
                                2 * kCodecLatentChannels);
    return {mean, clamp_min(softplus(raw), S(kScaleMin))};
  }

  // Per-channel learned Gaussian density for the hyper latent, broadcast to
  // the requested grid.
  HyperParamsOut<S> hyper_prior(int64_t N, int64_t H, int64_t W) const {
    Var<S> mu = broadcast_channels(prior_mean_, N, H, W);
    Var<S> raw = broadcast_channels(prior_rawscale_, N, H, W);
    return {mu, clamp_min(softplus(raw), S(kScaleMin))};
  }

  // Training-time forward with mixed quantization; the caller supplies the
  // uniform noise grids so runs are reproducible and finite-difference
  // checks can hold them fixed.
  AnchorForward<S> forward_training(const Var<S>& x,
                                    const std::optional<Var<S>>& z0,
                                    const Tensor<S>& noise_y,
                                    const Tensor<S>& noise_h) const {
    AnchorForward<S> out;
    AnchorAnalysisOut<S> a = analysis(x, z0);
    out.y = a.y;
    out.h_enc = a.h_enc;
    out.h = hyper_analysis(out.y);
    Var<S> y_rate = quantize(out.y, QuantizeMode::kNoise, &noise_y);
    Var<S> h_rate = quantize(out.h, QuantizeMode::kNoise, &noise_h);
    out.y_rec = quantize(out.y, QuantizeMode::kSte);
    out.h_rec = quantize(out.h, QuantizeMode::kSte);
    HyperParamsOut<S> hp = hyper_synthesis(out.h_rec);
    out.mean = hp.mean;
    out.scale = hp.scale;
    out.bits_y = estimate_rate(y_rate, out.mean, out.scale);
    HyperParamsOut<S> pr =
        hyper_prior(out.h.shape()[0], out.h.shape()[2], out.h.shape()[3]);
    out.bits_h = estimate_rate(h_rate, pr.mean, pr.scale);
    out.syn = synthesis(out.y_rec);
    return out;
  }

  AnchorForward<S> forward_training(const Var<S>& x,
                                    const std::optional<Var<S>>& z0,
                                    Rng& rng) const {
    AnchorAnalysisOut<S> probe = analysis(x, z0);
    Tensor<S> ny =
        Tensor<S>::rand_uniform(probe.y.shape(), rng, -0.5, 0.5);
    Var<S> h_probe = hyper_analysis(probe.y);
    Tensor<S> nh =
        Tensor<S>::rand_uniform(h_probe.shape(), rng, -0.5, 0.5);
    return forward_training(x, z0, ny, nh);
  }

  const Var<S>& prior_mean() const { return prior_mean_; }
  const Var<S>& prior_rawscale() const { return prior_rawscale_; }

 private:
  Conv2dLayer<S> ga1_, ga2_, ga3_, tap_, ga4_;
  Conv2dLayer<S> gs4_, gs3_, gs2_, gs1_, gs0_;
  Conv2dLayer<S> ha1_, ha2_;
  Conv2dLayer<S> hs1_, hs2_, hs3_;
  Var<S> prior_mean_, prior_rawscale_;
};

// ---------------------------------------------------------------------------
// Actual entropy coding of quantized latents.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
std::vector<int> to_symbols(const Tensor<S>& q, int lo, int hi,
                            const char* what) {
  std::vector<int> sym(size_t(q.numel()));
  for (int64_t i = 0; i < q.numel(); ++i) {
    const double v = double(q[i]);
    NEFIC_CHECK(std::isfinite(v) && v >= lo && v <= hi, CodingError, what,
                " symbol ", v, " outside codable range [", lo, ", ", hi, "]");
    sym[size_t(i)] = int(std::nearbyint(v));
  }
  return sym;
}

}  // namespace detail

// Codes the rounded hyper latent under the learned per-channel prior.
// One table per channel, shared across batch and spatial positions.
template <class S>
std::vector<CdfTable> hyper_cdf_tables(const AnchorCodec<S>& codec) {
  const Tensor<S>& mu = codec.prior_mean().value();
  const Tensor<S>& raw = codec.prior_rawscale().value();
  std::vector<CdfTable> tables;
  tables.reserve(size_t(kCodecHyperChannels));
  for (int64_t c = 0; c < kCodecHyperChannels; ++c) {
    const double sp = std::log1p(std::exp(double(raw[c])));
    tables.push_back(build_gaussian_cdf(double(mu[c]),
                                        std::max(sp, kScaleMin),
                                        kHyperSymMin, kHyperSymMax));
  }
  return tables;
}

template <class S>
std::vector<uint8_t> code_hyper(const AnchorCodec<S>& codec,
                                const Tensor<S>& h_q) {
  std::vector<CdfTable> tables = hyper_cdf_tables(codec);
  std::vector<int> sym =
      detail::to_symbols(h_q, kHyperSymMin, kHyperSymMax, "hyper");
  const int64_t C = h_q.shape()[1], HW = h_q.shape()[2] * h_q.shape()[3];
  std::vector<const CdfTable*> per_symbol(sym.size());
  for (size_t i = 0; i < sym.size(); ++i)
    per_symbol[i] = &tables[size_t((int64_t(i) / HW) % C)];
  return rc_encode(sym, per_symbol);
}

template <class S>
Tensor<S> decode_hyper(const AnchorCodec<S>& codec,
                       const std::vector<uint8_t>& payload, int64_t N,
                       int64_t H, int64_t W) {
  std::vector<CdfTable> tables = hyper_cdf_tables(codec);
  const int64_t C = kCodecHyperChannels, HW = H * W;
  std::vector<const CdfTable*> per_symbol(size_t(N * C * HW));
  for (size_t i = 0; i < per_symbol.size(); ++i)
    per_symbol[i] = &tables[size_t((int64_t(i) / HW) % C)];
  std::vector<int> sym = rc_decode(payload, per_symbol, per_symbol.size());
  Tensor<S> h({N, C, H, W});
  for (size_t i = 0; i < sym.size(); ++i) h[int64_t(i)] = S(sym[i]);
  return h;
}

// Codes the rounded latent under the hyper-synthesized per-element Gaussian.
template <class S>
std::vector<CdfTable> latent_cdf_tables(const Tensor<S>& mean,
                                        const Tensor<S>& scale) {
  std::vector<CdfTable> tables;
  tables.reserve(size_t(mean.numel()));
  for (int64_t i = 0; i < mean.numel(); ++i)
    tables.push_back(build_gaussian_cdf(double(mean[i]),
                                        std::max(double(scale[i]), kScaleMin),
                                        kLatentSymMin, kLatentSymMax));
  return tables;
}

template <class S>
std::vector<uint8_t> code_latent(const Tensor<S>& y_q, const Tensor<S>& mean,
                                 const Tensor<S>& scale) {
  NEFIC_CHECK(same_shape(y_q, mean) && same_shape(y_q, scale), ShapeError,
              "code_latent: mismatched grids");
  std::vector<CdfTable> tables = latent_cdf_tables(mean, scale);
  std::vector<int> sym =
      detail::to_symbols(y_q, kLatentSymMin, kLatentSymMax, "latent");
  std::vector<const CdfTable*> per_symbol(sym.size());
  for (size_t i = 0; i < sym.size(); ++i) per_symbol[i] = &tables[i];
  return rc_encode(sym, per_symbol);
}

template <class S>
Tensor<S> decode_latent(const std::vector<uint8_t>& payload,
                        const Tensor<S>& mean, const Tensor<S>& scale) {
  std::vector<CdfTable> tables = latent_cdf_tables(mean, scale);
  std::vector<const CdfTable*> per_symbol(tables.size());
  for (size_t i = 0; i < tables.size(); ++i) per_symbol[i] = &tables[i];
  std::vector<int> sym = rc_decode(payload, per_symbol, per_symbol.size());
  Tensor<S> y(mean.shape());
  for (size_t i = 0; i < sym.size(); ++i) y[int64_t(i)] = S(sym[i]);
  return y;
}

}  // namespace nefic

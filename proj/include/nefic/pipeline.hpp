// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_PIPELINE_HPP_
#define NEFIC_PIPELINE_HPP_

#include <optional>
#include <vector>

#include "nefic/bitstream.hpp"
#include "nefic/metrics.hpp"
#include "nefic/models.hpp"

namespace nefic {

// Fixed seed for the Gaussian one-step initialization used when bypass
// refinement is disabled; decompression must stay deterministic.
inline constexpr uint64_t kNoBypassNoiseSeed = 0xB1FA55;

template <class S>
struct CompressResult {
  std::vector<uint8_t> bytes;  // serialized container
  double bpp = 0.0;            // 8 * bytes / (H * W), header included
  double estimated_bits = 0.0; // entropy-model estimate for the payloads
  double coded_bits = 0.0;     // actual payload bits (headerless)
};

template <class S>
struct DecompressResult {
  Tensor<S> final_frame;   // [1,3,H,W] one-step reconstruction
  Tensor<S> anchor_frame;  // [1,3,H,W] decoded anchor
  Tensor<S> bypass_frame;  // [1,3,H,W] bypass latent decoded directly
};

// Deterministic encoder: image -> quantized latents -> range-coded container.
// `z0` conditioning follows the conditional-encoding flag.
template <class S>
CompressResult<S> compress_image(const Models<S>& m, const Tensor<S>& image,
                                 int lambda_id, const AblationFlags& flags) {
  NEFIC_CHECK(image.shape().size() == 4 && image.shape()[0] == 1 &&
                  image.shape()[1] == 3,
              ShapeError, "compress: need [1,3,H,W], got ",
              shape_str(image.shape()));
  const int64_t H = image.shape()[2], W = image.shape()[3];
  NEFIC_CHECK(H % 64 == 0 && W % 64 == 0, ShapeError,
              "compress: dims must be multiples of 64, got ", H, "x", W);
  NEFIC_CHECK(H <= 0xFFFF && W <= 0xFFFF, ShapeError,
              "compress: image too large for the container header");
  lambda_from_id(lambda_id);  // validates

  Var<S> x = constant(image);
  Var<S> z0 = m.vae.encode(x);
  std::optional<Var<S>> cond;
  if (flags.cond_enc) cond = z0;
  AnchorAnalysisOut<S> a = m.codec.analysis(x, cond);
  Var<S> h = m.codec.hyper_analysis(a.y);

  Tensor<S> h_q = quantize(h, QuantizeMode::kRound).value().clone();
  HyperParamsOut<S> hp = m.codec.hyper_synthesis(constant(h_q));
  Tensor<S> y_q = quantize(a.y, QuantizeMode::kRound).value().clone();

  CompressResult<S> out;
  BitstreamContainer c;
  c.lambda_id = uint8_t(lambda_id);
  c.width = uint16_t(W);
  c.height = uint16_t(H);
  c.payload_hyper = code_hyper(m.codec, h_q);
  c.payload_latent = code_latent(y_q, hp.mean.value(), hp.scale.value());
  out.bytes = serialize(c);
  out.bpp = 8.0 * double(out.bytes.size()) / double(H * W);
  out.coded_bits =
      8.0 * double(c.payload_hyper.size() + c.payload_latent.size());
  // Entropy-model estimate for the same quantized grids.
  HyperParamsOut<S> prior =
      m.codec.hyper_prior(1, h.shape()[2], h.shape()[3]);
  out.estimated_bits =
      double(estimate_rate(constant(y_q), hp.mean, hp.scale).value()[0]) +
      double(estimate_rate(constant(h_q), prior.mean, prior.scale).value()[0]);
  return out;
}

// Deterministic decoder: container -> anchor -> bypass -> one-step decode.
template <class S>
DecompressResult<S> decompress_payload(const Models<S>& m,
                                       const std::vector<uint8_t>& bytes,
                                       const AblationFlags& flags) {
  BitstreamContainer c = parse(bytes);
  NEFIC_CHECK(c.width % 64 == 0 && c.height % 64 == 0, ParseError,
              "container: dimensions ", c.width, "x", c.height,
              " are not multiples of 64");
  const int64_t H = c.height, W = c.width;
  const int64_t hh = H / 64, hw = W / 64;  // hyper-latent grid

  Tensor<S> h_q = decode_hyper<S>(m.codec, c.payload_hyper, 1, hh, hw);
  HyperParamsOut<S> hp = m.codec.hyper_synthesis(constant(h_q));
  Tensor<S> y_q =
      decode_latent<S>(c.payload_latent, hp.mean.value(), hp.scale.value());

  AnchorSynthesisOut<S> syn = m.codec.synthesis(constant(y_q));
  Var<S> z_anchor = m.vae.encode(syn.x_anchor);

  Var<S> z_bypass;
  if (flags.bypass_refine) {
    z_bypass = m.refiner.forward(syn.h_dec);
  } else {
    Rng rng(kNoBypassNoiseSeed);
    z_bypass = constant(
        Tensor<S>::randn({1, kLatentChannels, H / 8, W / 8}, rng));
  }
  Var<S> z0_hat = decode_one_step(m.dit, z_anchor, z_bypass, m.sched);

  DecompressResult<S> out;
  out.final_frame = m.vae.decode(z0_hat).value().clone();
  out.anchor_frame = syn.x_anchor.value().clone();
  out.bypass_frame = m.vae.decode(z_bypass).value().clone();
  return out;
}

// Per-image rate/quality measurement used by validation and the eval sweep.
struct EvalRow {
  double bpp = 0.0;
  double psnr_db = 0.0;
  double msssim_v = 0.0;
  double proxy = 0.0;
  double anchor_proxy = 0.0;
  double bypass_proxy = 0.0;
};

template <class S>
EvalRow evaluate_image(const Models<S>& m, const Tensor<S>& image,
                       int lambda_id, const AblationFlags& flags) {
  CompressResult<S> comp = compress_image(m, image, lambda_id, flags);
  DecompressResult<S> dec = decompress_payload(m, comp.bytes, flags);
  EvalRow row;
  row.bpp = comp.bpp;
  // Metrics operate on [C,H,W]; drop the singleton batch dimension.
  auto plane = [](const Tensor<S>& t) {
    Tensor<S> p({t.shape()[1], t.shape()[2], t.shape()[3]});
    std::copy(t.data(), t.data() + t.numel(), p.data());
    return p;
  };
  const Tensor<S> x = plane(image);
  const Tensor<S> fin = plane(dec.final_frame);
  row.psnr_db = psnr(x, fin);
  row.msssim_v = msssim(x, fin);
  Var<S> xv = constant(image);
  row.proxy = double(
      perceptual_proxy(m.vae, xv, constant(dec.final_frame)).value()[0]);
  row.anchor_proxy = double(
      perceptual_proxy(m.vae, xv, constant(dec.anchor_frame)).value()[0]);
  row.bypass_proxy = double(
      perceptual_proxy(m.vae, xv, constant(dec.bypass_frame)).value()[0]);
  return row;
}

}  // namespace nefic

#endif  // NEFIC_PIPELINE_HPP_

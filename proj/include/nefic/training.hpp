// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_TRAINING_HPP_
#define NEFIC_TRAINING_HPP_

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "nefic/checkpoint.hpp"
#include "nefic/dataset.hpp"
#include "nefic/pipeline.hpp"

namespace nefic {

// ---------------------------------------------------------------------------
// Adversarial losses: hinge objective for the discriminator, non-saturating
// objective for the generator, both on patch logits.
// ---------------------------------------------------------------------------

template <class S>
Var<S> hinge_d_loss(const Var<S>& real_logits, const Var<S>& fake_logits) {
  return add(mean_all(relu(add_scalar(neg(real_logits), S(1)))),
             mean_all(relu(add_scalar(fake_logits, S(1)))));
}

template <class S>
Var<S> nonsat_g_loss(const Var<S>& fake_logits) {
  return mean_all(softplus(neg(fake_logits)));
}

// ---------------------------------------------------------------------------
// Loss bookkeeping. `total` is the differentiable objective; the component
// fields are plain numbers for logging. The decomposition identity
//   total == noise + rgb + lambda_aux*aux + lambda_r*rate_bpp
// holds by construction because `total` is assembled from exactly the
// component subgraphs.
// ---------------------------------------------------------------------------

struct LossComponents {
  double noise = 0.0;     // latent prediction error (adaptation stage)
  double aux = 0.0;       // anchor reconstruction term (unweighted)
  double rate_bpp = 0.0;  // estimated bits per pixel
  double rgb_mse = 0.0;   // pixel error of the final frame (final stage)
  double rgb_proxy = 0.0; // perceptual term of the final frame (final stage)
  double gan = 0.0;       // generator adversarial term (final stage)
  double total = 0.0;

  double recompose(double lambda_aux, double lambda_r, double w_gan,
                   double w_mse, double w_lpips) const {
    return noise + w_gan * gan + w_mse * rgb_mse + w_lpips * rgb_proxy +
           lambda_aux * aux + lambda_r * rate_bpp;
  }
};

template <class S>
struct LossOut {
  Var<S> total;
  LossComponents comps;
  Tensor<S> final_frames;  // [N,3,H,W] reconstruction values (final stage)
};

// Anchor regularizer: weighted pixel MSE plus the perceptual proxy, keeping
// the decoded anchor close to the source so it stays a strong condition.
template <class S>
Var<S> aux_anchor_loss(const ToyVae<S>& vae, const Var<S>& x,
                       const Var<S>& x_anchor, double w_mse, double w_lpips) {
  return add(mul_scalar(mse(x_anchor, x), S(w_mse)),
             mul_scalar(perceptual_proxy(vae, x_anchor, x), S(w_lpips)));
}

namespace detail {

template <class S>
Tensor<S> batch_slice(const Tensor<S>& batch, int64_t b) {
  const int64_t C = batch.shape()[1], H = batch.shape()[2],
                W = batch.shape()[3];
  Tensor<S> one({1, C, H, W});
  const int64_t plane = C * H * W;
  std::copy(batch.data() + b * plane, batch.data() + (b + 1) * plane,
            one.data());
  return one;
}

// Shapes of the two quantizer-noise grids for an HxW input.
inline Shape y_noise_shape(int64_t h, int64_t w) {
  return {1, kCodecLatentChannels, h / 16, w / 16};
}
inline Shape h_noise_shape(int64_t h, int64_t w) {
  return {1, kCodecHyperChannels, h / 64, w / 64};
}

}  // namespace detail

// Frozen stochastic draws for one sample, so finite-difference checks can
// re-evaluate the loss with identical noise.
template <class S>
struct Stage1Sample {
  Tensor<S> noise_y, noise_h;  // uniform(-1/2,1/2) quantizer noise
  Tensor<S> eps;               // Gaussian diffusion noise
  int64_t t = 1;               // diffusion timestep in [1,T]

  static Stage1Sample draw(int64_t h, int64_t w, int T, Rng& rng) {
    Stage1Sample s;
    s.noise_y =
        Tensor<S>::rand_uniform(detail::y_noise_shape(h, w), rng, S(-0.5), S(0.5));
    s.noise_h =
        Tensor<S>::rand_uniform(detail::h_noise_shape(h, w), rng, S(-0.5), S(0.5));
    s.eps = Tensor<S>::randn({1, kLatentChannels, h / 8, w / 8}, rng);
    s.t = rng.uniform_int(1, T);
    return s;
  }
};

// Adaptation-stage objective for one sample:
//   total = noise + lambda_aux * aux + lambda_r * rate_bpp
// noise    — mean squared error between the one-shot clean-latent prediction
//            at the drawn timestep and the true latent;
// aux      — anchor reconstruction term (weighted MSE + proxy);
// rate_bpp — entropy-model estimate for both coded grids, per pixel.
template <class S>
LossOut<S> loss_stage1_sample(const Models<S>& m, const Tensor<S>& x_i,
                              const RunConfig& cfg, const Stage1Sample<S>& sn) {
  const int64_t H = x_i.shape()[2], W = x_i.shape()[3];
  Var<S> x = constant(x_i);
  Var<S> z0 = detach(m.vae.encode(x));
  std::optional<Var<S>> cond;
  if (cfg.flags.cond_enc) cond = z0;
  AnchorForward<S> f = m.codec.forward_training(x, cond, sn.noise_y, sn.noise_h);
  Var<S> x_anchor = f.syn.x_anchor;

  Var<S> rate_bpp =
      mul_scalar(add(f.bits_y, f.bits_h), S(1.0 / double(H * W)));

  Var<S> z_anchor = m.vae.encode(x_anchor);
  Var<S> z_t = add_noise(z0, int(sn.t), constant(sn.eps), m.sched);
  Var<S> v = m.dit.forward(z_anchor, z_t, sn.t);
  Var<S> z0_hat = predict_z0(z_t, v, int(sn.t), m.sched);
  Var<S> noise_loss = mse(z0_hat, z0);

  LossOut<S> out;
  out.comps.noise = double(noise_loss.value()[0]);
  out.comps.rate_bpp = double(rate_bpp.value()[0]);
  Var<S> total = add(noise_loss, mul_scalar(rate_bpp, S(cfg.lambda_r())));
  if (cfg.flags.aux_loss) {
    Var<S> aux = aux_anchor_loss(m.vae, x, x_anchor, cfg.stage1_lambda_mse,
                                 cfg.stage1_lambda_lpips);
    out.comps.aux = double(aux.value()[0]);
    total = add(total, mul_scalar(aux, S(cfg.lambda_aux)));
  }
  out.total = total;
  out.comps.total = double(total.value()[0]);
  return out;
}

template <class S>
LossOut<S> loss_stage1(const Models<S>& m, const Tensor<S>& batch,
                       const RunConfig& cfg, Rng& rng) {
  const int64_t N = batch.shape()[0];
  LossOut<S> out;
  Var<S> sum;
  for (int64_t b = 0; b < N; ++b) {
    Tensor<S> x_i = detail::batch_slice(batch, b);
    Stage1Sample<S> sn =
        Stage1Sample<S>::draw(x_i.shape()[2], x_i.shape()[3], m.sched.T, rng);
    LossOut<S> one = loss_stage1_sample(m, x_i, cfg, sn);
    sum = b == 0 ? one.total : add(sum, one.total);
    out.comps.noise += one.comps.noise;
    out.comps.aux += one.comps.aux;
    out.comps.rate_bpp += one.comps.rate_bpp;
  }
  out.total = mul_scalar(sum, S(1.0 / double(N)));
  out.comps.noise /= double(N);
  out.comps.aux /= double(N);
  out.comps.rate_bpp /= double(N);
  out.comps.total = double(out.total.value()[0]);
  return out;
}

template <class S>
struct Stage2Sample {
  Tensor<S> noise_y, noise_h;  // quantizer noise
  Tensor<S> z_init;            // Gaussian start when bypass refinement is off
  bool gan_active = false;

  static Stage2Sample draw(int64_t h, int64_t w, bool gan_active, Rng& rng) {
    Stage2Sample s;
    s.noise_y =
        Tensor<S>::rand_uniform(detail::y_noise_shape(h, w), rng, S(-0.5), S(0.5));
    s.noise_h =
        Tensor<S>::rand_uniform(detail::h_noise_shape(h, w), rng, S(-0.5), S(0.5));
    s.z_init = Tensor<S>::randn({1, kLatentChannels, h / 8, w / 8}, rng);
    s.gan_active = gan_active;
    return s;
  }
};

// Final-stage objective for one sample: runs the complete decoding path
// (anchor -> bypass -> one-step prediction -> image decoder) and scores the
// final frame,
//   total = w_gan*gan + w_mse*rgb_mse + w_lpips*rgb_proxy
//         + lambda_aux*aux + lambda_r*rate_bpp.
template <class S>
LossOut<S> loss_stage2_sample(const Models<S>& m, const Tensor<S>& x_i,
                              const RunConfig& cfg, const Stage2Sample<S>& sn) {
  const int64_t H = x_i.shape()[2], W = x_i.shape()[3];
  Var<S> x = constant(x_i);
  Var<S> z0 = detach(m.vae.encode(x));
  std::optional<Var<S>> cond;
  if (cfg.flags.cond_enc) cond = z0;
  AnchorForward<S> f = m.codec.forward_training(x, cond, sn.noise_y, sn.noise_h);
  Var<S> x_anchor = f.syn.x_anchor;

  Var<S> rate_bpp =
      mul_scalar(add(f.bits_y, f.bits_h), S(1.0 / double(H * W)));

  Var<S> z_anchor = m.vae.encode(x_anchor);
  Var<S> z_bypass = cfg.flags.bypass_refine ? m.refiner.forward(f.syn.h_dec)
                                            : constant(sn.z_init);
  Var<S> z0_hat = decode_one_step(m.dit, z_anchor, z_bypass, m.sched);
  Var<S> x_hat = m.vae.decode(z0_hat);

  LossOut<S> out;
  Var<S> rgb_mse = mse(x_hat, x);
  Var<S> rgb_proxy = perceptual_proxy(m.vae, x_hat, x);
  out.comps.rgb_mse = double(rgb_mse.value()[0]);
  out.comps.rgb_proxy = double(rgb_proxy.value()[0]);
  Var<S> total = add(mul_scalar(rgb_mse, S(cfg.stage2_lambda_mse)),
                     mul_scalar(rgb_proxy, S(cfg.stage2_lambda_lpips)));
  if (sn.gan_active && cfg.flags.gan_loss) {
    Var<S> g = nonsat_g_loss(disc_logits(m.vae, m.disc, x_hat));
    out.comps.gan = double(g.value()[0]);
    total = add(total, mul_scalar(g, S(cfg.stage2_lambda_gan)));
  }
  if (cfg.flags.aux_loss) {
    Var<S> aux = aux_anchor_loss(m.vae, x, x_anchor, cfg.stage1_lambda_mse,
                                 cfg.stage1_lambda_lpips);
    out.comps.aux = double(aux.value()[0]);
    total = add(total, mul_scalar(aux, S(cfg.lambda_aux)));
  }
  total = add(total, mul_scalar(rate_bpp, S(cfg.lambda_r())));
  out.comps.rate_bpp = double(rate_bpp.value()[0]);
  out.total = total;
  out.comps.total = double(total.value()[0]);
  out.final_frames = x_hat.value().clone();
  return out;
}

template <class S>
LossOut<S> loss_stage2(const Models<S>& m, const Tensor<S>& batch,
                       const RunConfig& cfg, bool gan_active, Rng& rng) {
  const int64_t N = batch.shape()[0];
  LossOut<S> out;
  out.final_frames = Tensor<S>(batch.shape());
  Var<S> sum;
  const int64_t plane = batch.numel() / N;
  for (int64_t b = 0; b < N; ++b) {
    Tensor<S> x_i = detail::batch_slice(batch, b);
    Stage2Sample<S> sn = Stage2Sample<S>::draw(x_i.shape()[2], x_i.shape()[3],
                                               gan_active, rng);
    LossOut<S> one = loss_stage2_sample(m, x_i, cfg, sn);
    sum = b == 0 ? one.total : add(sum, one.total);
    out.comps.noise += one.comps.noise;
    out.comps.aux += one.comps.aux;
    out.comps.rate_bpp += one.comps.rate_bpp;
    out.comps.rgb_mse += one.comps.rgb_mse;
    out.comps.rgb_proxy += one.comps.rgb_proxy;
    out.comps.gan += one.comps.gan;
    std::copy(one.final_frames.data(), one.final_frames.data() + plane,
              out.final_frames.data() + b * plane);
  }
  out.total = mul_scalar(sum, S(1.0 / double(N)));
  out.comps.noise /= double(N);
  out.comps.aux /= double(N);
  out.comps.rate_bpp /= double(N);
  out.comps.rgb_mse /= double(N);
  out.comps.rgb_proxy /= double(N);
  out.comps.gan /= double(N);
  out.comps.total = double(out.total.value()[0]);
  return out;
}

// One hinge-loss update of the discriminator head on a real/fake pair. The
// feature backbone is frozen; only the head receives gradients (the head's
// optimizer holds exactly the head parameters).
template <class S>
double discriminator_step(Models<S>& m, AdamW<S>& d_opt,
                          const Tensor<S>& x_real, const Tensor<S>& x_fake) {
  m.ps.zero_grad();
  Var<S> real = disc_logits(m.vae, m.disc, constant(x_real));
  Var<S> fake = disc_logits(m.vae, m.disc, constant(x_fake));
  Var<S> loss = hinge_d_loss(real, fake);
  backward(loss);
  d_opt.step();
  const double v = double(loss.value()[0]);
  m.ps.zero_grad();
  return v;
}

// ---------------------------------------------------------------------------
// Metrics logging
// ---------------------------------------------------------------------------

namespace detail {

class CsvLog {
 public:
  CsvLog(const std::string& path, const std::string& header) : os_(path) {
    NEFIC_CHECK(os_.good(), IoError, "cannot write log '", path, "'");
    os_ << header << "\n";
    os_.flush();
  }
  template <class... Args>
  void row(const Args&... cells) {
    bool first = true;
    ((os_ << (first ? (first = false, "") : ",") << fmt(cells)), ...);
    os_ << "\n";
    os_.flush();
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
  }
  static std::string fmt(int64_t v) { return std::to_string(v); }
  static std::string fmt(uint64_t v) { return std::to_string(v); }
  static std::string fmt(int v) { return std::to_string(v); }
  static std::string fmt(const char* s) { return s; }
  static std::string fmt(const std::string& s) { return s; }
  std::ofstream os_;
};

inline const char* kTrainHeader =
    "step,stage,lambda_r,total,noise,aux,rate_bpp,rgb_mse,rgb_proxy,gan,"
    "vae_mse,vae_reg,grad_norm,lr";
inline const char* kValHeader =
    "step,stage,lambda_r,bpp,psnr,msssim,proxy,loss";

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage orchestration
// ---------------------------------------------------------------------------

namespace detail {

inline std::string ckpt_path(const std::string& dir, StageId stage) {
  return (std::filesystem::path(dir) / (std::string(stage_name(stage)) + ".ckpt"))
      .string();
}

// Finds the prerequisite checkpoint in the run's own output directory first,
// then in the shared init directory.
inline std::string require_dependency(const RunConfig& cfg, StageId needed,
                                      StageId target) {
  const std::string own = ckpt_path(cfg.out_dir, needed);
  if (std::filesystem::exists(own)) return own;
  if (!cfg.init_dir.empty()) {
    const std::string shared = ckpt_path(cfg.init_dir, needed);
    if (std::filesystem::exists(shared)) return shared;
  }
  throw DependencyError(str_cat(
      "stage '", stage_name(target), "' requires a '", stage_name(needed),
      "' checkpoint; run `nefic train ", stage_name(needed), "` first (looked for ",
      own, cfg.init_dir.empty() ? "" : str_cat(" and ", ckpt_path(cfg.init_dir, needed)),
      ")"));
}

// The one-shot latent prediction loss evaluated on held-out data with fixed
// draws; the backbone pretraining validation signal.
template <class S>
double backbone_val_loss(const Models<S>& m, const std::vector<Tensor<S>>& val,
                         double blur_sigma, uint64_t seed) {
  double sum = 0.0;
  for (size_t i = 0; i < val.size(); ++i) {
    Rng rng(seed ^ (0xC0FFEEull * (i + 1)));
    Var<S> x = constant(val[i]);
    Var<S> z0 = detach(m.vae.encode(x));
    Var<S> z_blur =
        detach(m.vae.encode(constant(gaussian_blur(val[i], blur_sigma))));
    Tensor<S> eps = Tensor<S>::randn(z0.shape(), rng);
    const int t = kOneStepT;
    Var<S> z_t = add_noise(z0, t, constant(eps), m.sched);
    Var<S> v = m.dit.forward(z_blur, z_t, t);
    sum += double(mse(v, target_v(z0, constant(eps), t, m.sched)).value()[0]);
  }
  return sum / double(val.size());
}

}  // namespace detail

// Pretrains the image autoencoder: reconstruction MSE plus a small latent
// regularizer, then fits the per-channel latent normalization on validation
// images. Returns the per-channel raw latent standard deviations.
template <class S>
std::vector<double> pretrain_vae(Models<S>& m, const Dataset<S>& train,
                                 const Dataset<S>& val, const RunConfig& cfg,
                                 detail::CsvLog& log, detail::CsvLog& val_log,
                                 const std::string& ckpt = {},
                                 const std::string& cfg_json = "{}") {
  configure_trainables(m, StageId::kVae);
  AdamW<S> opt(typename AdamW<S>::Options{cfg.vae_lr, 0.9, 0.999, 1e-8, 0.01});
  opt.attach(m.ps);
  Rng data_rng(cfg.seed ^ 0xDA7A0001ull);

  for (int64_t step = 1; step <= cfg.vae_steps; ++step) {
    Tensor<S> batch =
        sample_batch(train, cfg.batch, cfg.crop_min, cfg.crop_max, data_rng);
    Var<S> x = constant(batch);
    Var<S> z = m.vae.encode_raw(x);
    Var<S> x_rec = m.vae.decode_raw(z);
    Var<S> rec = mse(x_rec, x);
    Var<S> reg = mean_all(square(z));
    Var<S> total = add(rec, mul_scalar(reg, S(cfg.vae_latent_reg)));
    m.ps.zero_grad();
    backward(total);
    const double gnorm = opt.step();
    if (step % cfg.log_every == 0 || step == 1) {
      log.row(step, "vae", 0.0, double(total.value()[0]), 0.0, 0.0, 0.0, 0.0,
              0.0, 0.0, double(rec.value()[0]), double(reg.value()[0]), gnorm,
              opt.lr());
    }
    if (step % cfg.val_every == 0 || step == cfg.vae_steps) {
      double ps = 0.0, ms = 0.0, px = 0.0, ls = 0.0;
      const size_t nval = std::min<size_t>(size_t(cfg.val_images), val.size());
      for (size_t i = 0; i < nval; ++i) {
        Tensor<S> img = center_crop(val.images[i],
                                    std::min<int64_t>(val.images[i].shape()[1], 64),
                                    std::min<int64_t>(val.images[i].shape()[2], 64));
        Tensor<S> x1({1, 3, img.shape()[1], img.shape()[2]});
        std::copy(img.data(), img.data() + img.numel(), x1.data());
        Var<S> xv = constant(x1);
        Var<S> rec_v = clamp01(m.vae.decode_raw(m.vae.encode_raw(xv)));
        Tensor<S> r({3, img.shape()[1], img.shape()[2]});
        std::copy(rec_v.value().data(), rec_v.value().data() + r.numel(),
                  r.data());
        ps += psnr(img, r);
        ms += msssim(img, r);
        px += double(perceptual_proxy(m.vae, xv, rec_v).value()[0]);
        ls += double(mse(rec_v, xv).value()[0]);
      }
      val_log.row(step, "vae", 0.0, 0.0, ps / double(nval), ms / double(nval),
                  px / double(nval), ls / double(nval));
    }
    if (!ckpt.empty() && step % cfg.checkpoint_every == 0)
      save_checkpoint(ckpt, m.ps, uint64_t(step), cfg_json);
  }

  // Fit the latent normalization: per-channel mean/std of the raw encoder
  // output over validation images.
  std::vector<double> mean(size_t(kLatentChannels), 0.0);
  std::vector<double> var(size_t(kLatentChannels), 0.0);
  int64_t count = 0;
  for (const auto& img : val.images) {
    const int64_t h = img.shape()[1] - img.shape()[1] % 8;
    const int64_t w = img.shape()[2] - img.shape()[2] % 8;
    Tensor<S> c = center_crop(img, h, w);
    Tensor<S> x1({1, 3, h, w});
    std::copy(c.data(), c.data() + c.numel(), x1.data());
    Tensor<S> z = m.vae.encode_raw(constant(x1)).value().clone();
    const int64_t hw = z.shape()[2] * z.shape()[3];
    for (int64_t ch = 0; ch < kLatentChannels; ++ch)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = double(z[ch * hw + i]);
        mean[size_t(ch)] += v;
        var[size_t(ch)] += v * v;
      }
    count += hw;
  }
  NEFIC_CHECK(count > 0, ConfigError, "pretrain_vae: empty validation set");
  Tensor<S> mu({kLatentChannels}), sd({kLatentChannels});
  std::vector<double> stds(static_cast<size_t>(kLatentChannels));
  for (int64_t ch = 0; ch < kLatentChannels; ++ch) {
    const double mu_c = mean[size_t(ch)] / double(count);
    const double var_c =
        std::max(var[size_t(ch)] / double(count) - mu_c * mu_c, 1e-12);
    mu[ch] = S(mu_c);
    sd[ch] = S(std::sqrt(var_c));
    stds[size_t(ch)] = std::sqrt(var_c);
  }
  m.vae.set_normalization(mu, sd);
  return stds;
}

// Pretrains the prediction backbone on blur-conditioned two-frame denoising:
// frame 0 is a Gaussian-blurred copy (sometimes dropped for unconditional
// steps), frame 1 is the clean image; the v-prediction loss is taken on the
// frame-1 tokens.
template <class S>
void pretrain_backbone(Models<S>& m, const Dataset<S>& train,
                       const Dataset<S>& val, const RunConfig& cfg,
                       detail::CsvLog& log, detail::CsvLog& val_log,
                       const std::string& ckpt = {},
                       const std::string& cfg_json = "{}") {
  configure_trainables(m, StageId::kBackbone);
  AdamW<S> opt(
      typename AdamW<S>::Options{cfg.backbone_lr, 0.9, 0.999, 1e-8, 0.01});
  opt.attach(m.ps);
  Rng data_rng(cfg.seed ^ 0xDA7A0002ull);
  Rng train_rng(cfg.seed ^ 0x7EA10002ull);

  std::vector<Tensor<S>> val_crops;
  for (size_t i = 0; i < std::min<size_t>(size_t(cfg.val_images), val.size()); ++i) {
    const auto& img = val.images[i];
    Tensor<S> c = center_crop(img, std::min<int64_t>(img.shape()[1], 64),
                              std::min<int64_t>(img.shape()[2], 64));
    Tensor<S> x1({1, 3, c.shape()[1], c.shape()[2]});
    std::copy(c.data(), c.data() + c.numel(), x1.data());
    val_crops.push_back(x1);
  }

  for (int64_t step = 1; step <= cfg.backbone_steps; ++step) {
    Tensor<S> batch =
        sample_batch(train, cfg.batch, cfg.crop_min, cfg.crop_max, data_rng);
    const int64_t N = batch.shape()[0];
    Var<S> sum;
    for (int64_t b = 0; b < N; ++b) {
      Tensor<S> x_i = detail::batch_slice(batch, b);
      Var<S> z0 = detach(m.vae.encode(constant(x_i)));
      Var<S> z_anchor;
      if (train_rng.uniform() < cfg.backbone_uncond_prob) {
        z_anchor = constant(Tensor<S>::zeros(z0.shape()));
      } else {
        z_anchor = detach(
            m.vae.encode(constant(gaussian_blur(x_i, cfg.backbone_blur_sigma))));
      }
      Tensor<S> eps = Tensor<S>::randn(z0.shape(), train_rng);
      const int64_t t = train_rng.uniform_int(1, m.sched.T);
      Var<S> z_t = add_noise(z0, int(t), constant(eps), m.sched);
      Var<S> v = m.dit.forward(z_anchor, z_t, t);
      Var<S> l = mse(v, target_v(z0, constant(eps), int(t), m.sched));
      sum = b == 0 ? l : add(sum, l);
    }
    Var<S> total = mul_scalar(sum, S(1.0 / double(N)));
    m.ps.zero_grad();
    backward(total);
    const double gnorm = opt.step();
    if (step % cfg.log_every == 0 || step == 1) {
      log.row(step, "backbone", 0.0, double(total.value()[0]),
              double(total.value()[0]), 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
              gnorm, opt.lr());
    }
    if (step % cfg.val_every == 0 || step == cfg.backbone_steps) {
      const double vl = detail::backbone_val_loss(m, val_crops,
                                                  cfg.backbone_blur_sigma,
                                                  cfg.seed);
      val_log.row(step, "backbone", 0.0, 0.0, 0.0, 0.0, 0.0, vl);
    }
    if (!ckpt.empty() && step % cfg.checkpoint_every == 0)
      save_checkpoint(ckpt, m.ps, uint64_t(step), cfg_json);
  }
}

namespace detail {

// Shared validation sweep for the two adaptation stages: full
// compress -> decompress on held-out crops, actual coded bits.
template <class S>
void stage_validation(const Models<S>& m, const std::vector<Tensor<S>>& val,
                      const RunConfig& cfg, const char* stage, int64_t step,
                      CsvLog& val_log) {
  double bpp = 0.0, ps = 0.0, ms = 0.0, px = 0.0;
  for (const auto& img : val) {
    EvalRow row = evaluate_image(m, img, cfg.lambda_id, cfg.flags);
    bpp += row.bpp;
    ps += row.psnr_db;
    ms += row.msssim_v;
    px += row.proxy;
  }
  const double n = double(val.size());
  val_log.row(step, stage, cfg.lambda_r(), bpp / n, ps / n, ms / n, px / n,
              0.0);
}

template <class S>
std::vector<Tensor<S>> val_crops_64(const Dataset<S>& val, int64_t max_images) {
  std::vector<Tensor<S>> out;
  for (size_t i = 0; i < std::min<size_t>(size_t(max_images), val.size()); ++i) {
    const auto& img = val.images[i];
    const int64_t side = std::min<int64_t>(
        {img.shape()[1] - img.shape()[1] % 64, img.shape()[2] - img.shape()[2] % 64,
         int64_t(64)});
    NEFIC_CHECK(side >= 64, ConfigError,
                "validation image smaller than 64x64: ",
                shape_str(img.shape()));
    Tensor<S> c = center_crop(img, side, side);
    Tensor<S> x1({1, 3, side, side});
    std::copy(c.data(), c.data() + c.numel(), x1.data());
    out.push_back(x1);
  }
  return out;
}

}  // namespace detail

// Runs one training stage end to end: dependency checking, freeze
// configuration, the optimization loop, metrics logs and checkpoints.
// Deterministic for a fixed config (the seed pins initialization, data order
// and every stochastic draw).
template <class S>
void run_stage(StageId stage, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  Models<S> m(cfg.seed);

  // Prerequisite chain: vae -> backbone -> stage1 -> stage2. Each checkpoint
  // is a full snapshot, so loading the immediate predecessor restores the
  // entire chain.
  switch (stage) {
    case StageId::kVae:
      break;
    case StageId::kBackbone:
      load_checkpoint(detail::require_dependency(cfg, StageId::kVae, stage), m.ps);
      break;
    case StageId::kStage1:
      load_checkpoint(detail::require_dependency(cfg, StageId::kBackbone, stage),
                      m.ps);
      break;
    case StageId::kStage2:
      load_checkpoint(detail::require_dependency(cfg, StageId::kStage1, stage),
                      m.ps);
      break;
  }

  const std::string cfg_json = config_to_json(cfg);
  const std::string ckpt = detail::ckpt_path(cfg.out_dir, stage);
  detail::CsvLog log((fs::path(cfg.out_dir) /
                      (std::string(stage_name(stage)) + "_train.csv")).string(),
                     detail::kTrainHeader);
  detail::CsvLog val_log((fs::path(cfg.out_dir) /
                          (std::string(stage_name(stage)) + "_val.csv")).string(),
                         detail::kValHeader);

  Dataset<S> train = load_dataset<S>(cfg.train_dir);
  Dataset<S> val = load_dataset<S>(cfg.val_dir);

  if (stage == StageId::kVae) {
    pretrain_vae(m, train, val, cfg, log, val_log, ckpt, cfg_json);
    save_checkpoint(ckpt, m.ps, uint64_t(cfg.vae_steps), cfg_json);
    return;
  }
  if (stage == StageId::kBackbone) {
    pretrain_backbone(m, train, val, cfg, log, val_log, ckpt, cfg_json);
    save_checkpoint(ckpt, m.ps, uint64_t(cfg.backbone_steps), cfg_json);
    return;
  }

  // Adaptation stages.
  const bool is_s2 = stage == StageId::kStage2;
  const int64_t steps = is_s2 ? cfg.stage2_steps : cfg.stage1_steps;
  const double lr0 = is_s2 ? cfg.stage2_lr : cfg.stage1_lr;
  configure_trainables(m, stage);
  AdamW<S> opt(typename AdamW<S>::Options{lr0, 0.9, 0.999, 1e-8, 0.01});
  opt.attach(m.ps);
  AdamW<S> d_opt(
      typename AdamW<S>::Options{cfg.stage2_disc_lr, 0.9, 0.999, 1e-8, 0.01});
  if (is_s2 && cfg.flags.gan_loss) {
    // Attach the adversarial optimizer to exactly the head parameters:
    // freeze everything, expose the head, snapshot, then restore the
    // generator-side trainable set.
    m.ps.set_trainable_all(false);
    m.ps.set_trainable_matching("disc.", true);
    d_opt.attach(m.ps);
    configure_trainables(m, stage);
  }

  const uint64_t frozen_before = checksum_stage_frozen(m.ps, stage);
  Rng data_rng(cfg.seed ^ (is_s2 ? 0xDA7A0004ull : 0xDA7A0003ull));
  Rng train_rng(cfg.seed ^ (is_s2 ? 0x7EA10004ull : 0x7EA10003ull));
  std::vector<Tensor<S>> val_set = detail::val_crops_64<S>(val, cfg.val_images);

  for (int64_t step = 1; step <= steps; ++step) {
    const bool gan_active =
        is_s2 && cfg.flags.gan_loss && step > cfg.stage2_gan_start();
    if (is_s2 && step == cfg.stage2_lr_decay_step() + 1)
      opt.set_lr(cfg.stage2_lr_final);

    Tensor<S> batch =
        sample_batch(train, cfg.batch, cfg.crop_min, cfg.crop_max, data_rng);
    LossOut<S> out;
    if (is_s2) {
      // The adversarial term differentiates *through* the frozen head into
      // the generator; the head's own weights stay untouched here.
      out = loss_stage2(m, batch, cfg, gan_active, train_rng);
      m.ps.zero_grad();
      backward(out.total);
      const double gnorm = opt.step();
      if (gan_active) {
        m.ps.set_trainable_matching("disc.", true);
        discriminator_step(m, d_opt, batch, out.final_frames);
        m.ps.set_trainable_matching("disc.", false);
      }
      if (step % cfg.log_every == 0 || step == 1)
        log.row(step, "stage2", cfg.lambda_r(), out.comps.total, 0.0,
                out.comps.aux, out.comps.rate_bpp, out.comps.rgb_mse,
                out.comps.rgb_proxy, out.comps.gan, 0.0, 0.0, gnorm, opt.lr());
      const double recomposed = out.comps.recompose(
          cfg.flags.aux_loss ? cfg.lambda_aux : 0.0, cfg.lambda_r(),
          cfg.stage2_lambda_gan, cfg.stage2_lambda_mse, cfg.stage2_lambda_lpips);
      NEFIC_CHECK(std::abs(recomposed - out.comps.total) <=
                      5e-5 * std::max(1.0, std::abs(out.comps.total)),
                  EvalError, "loss decomposition drifted at step ", step);
    } else {
      out = loss_stage1(m, batch, cfg, train_rng);
      m.ps.zero_grad();
      backward(out.total);
      const double gnorm = opt.step();
      if (step % cfg.log_every == 0 || step == 1)
        log.row(step, "stage1", cfg.lambda_r(), out.comps.total,
                out.comps.noise, out.comps.aux, out.comps.rate_bpp, 0.0, 0.0,
                0.0, 0.0, 0.0, gnorm, opt.lr());
      const double recomposed = out.comps.recompose(
          cfg.flags.aux_loss ? cfg.lambda_aux : 0.0, cfg.lambda_r(), 0.0, 0.0,
          0.0);
      NEFIC_CHECK(std::abs(recomposed - out.comps.total) <=
                      5e-5 * std::max(1.0, std::abs(out.comps.total)),
                  EvalError, "loss decomposition drifted at step ", step);
    }

    if (step % cfg.val_every == 0 || step == steps)
      detail::stage_validation(m, val_set, cfg, stage_name(stage), step,
                               val_log);
    if (step % cfg.checkpoint_every == 0)
      save_checkpoint(ckpt, m.ps, uint64_t(step), cfg_json);
  }

  NEFIC_CHECK(checksum_stage_frozen(m.ps, stage) == frozen_before, EvalError,
              "frozen parameters changed during ", stage_name(stage));
  save_checkpoint(ckpt, m.ps, uint64_t(steps), cfg_json);
}

}  // namespace nefic

#endif  // NEFIC_TRAINING_HPP_

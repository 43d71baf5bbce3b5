// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
//
// Next-frame denoising transformer.  The token sequence is a learned prompt
// followed by anchor-frame and (noisy) target-frame latent patches; all
// tokens attend bidirectionally with rotary position offsets along the
// (frame, row, col) axes, and timestep conditioning enters as adaptive
// scale/shift around each sub-layer.  Attention projections carry low-rank
// adapters so finetuning can leave the base weights untouched.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nefic/autograd.hpp"
#include "nefic/nn.hpp"
#include "nefic/ops.hpp"
#include "nefic/vae.hpp"

namespace nefic {

inline constexpr int64_t kModelDim = 128;  // token width D
inline constexpr int64_t kNumBlocks = 4;
inline constexpr int64_t kPromptTokens = 16;
inline constexpr int64_t kPatchSize = 2;
inline constexpr int64_t kDefaultLoraRank = 8;

// Sinusoidal embedding of an integer timestep (first half sines, second
// half cosines, geometric frequency ladder).
template <class S>
Tensor<S> timestep_embedding(int64_t t, int64_t dim) {
  NEFIC_CHECK(dim % 2 == 0, ConfigError, "timestep embedding dim must be even");
  Tensor<S> e({dim});
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -double(i) / double(half));
    e[i] = S(std::sin(double(t) * freq));
    e[half + i] = S(std::cos(double(t) * freq));
  }
  return e;
}

// Linear layer with a low-rank residual adapter: y = x W^T + s (x d) u.
// `up` starts at zero, so a fresh adapter leaves the base map unchanged.
// Rank 0 means "no adapter": the layer degrades to its base map.
template <class S>
struct LoraLinear {
  LinearLayer<S> base;
  Var<S> down, up;  // [in, r] and [r, out]
  int64_t rank = kDefaultLoraRank;
  S scale = S(1);  // alpha / rank

  LoraLinear() = default;
  LoraLinear(int64_t in, int64_t out, int64_t r, double alpha, Rng& rng)
      : base(in, out, rng), rank(r) {
    if (rank > 0) {
      scale = S(alpha / double(r));
      down = Var<S>::leaf(init_uniform_fanin<S>({in, r}, in, rng), true);
      up = Var<S>::leaf(Tensor<S>::zeros({r, out}), true);
    }
  }

  Var<S> forward(const Var<S>& x) const {
    Var<S> y = base.forward(x);
    if (rank == 0) return y;
    Var<S> delta = matmul(matmul(x, down), up);
    return add(y, mul_scalar(delta, scale));
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    base.register_params(ps, prefix);
    if (rank > 0) {
      ps.add(prefix + ".lora_down", &down);
      ps.add(prefix + ".lora_up", &up);
    }
  }

  // Folds the adapter into the base weight and neutralizes it.
  void merge() {
    if (rank == 0) return;
    base.w.value() = lora_merged_weight(base.w.value(), down.value(),
                                        up.value(), double(scale));
    up.value().fill(S(0));
  }

  // base_w: [out, in]; down: [in, r]; up: [r, out].
  static Tensor<S> lora_merged_weight(const Tensor<S>& base_w,
                                      const Tensor<S>& down,
                                      const Tensor<S>& up, double scale) {
    const int64_t out = base_w.shape()[0], in = base_w.shape()[1],
                  r = down.shape()[1];
    NEFIC_CHECK(down.shape()[0] == in && up.shape()[0] == r &&
                    up.shape()[1] == out,
                ConfigError, "adapter rank/shape mismatch: base ",
                shape_str(base_w.shape()), " down ", shape_str(down.shape()),
                " up ", shape_str(up.shape()));
    Tensor<S> w = base_w.clone();
    for (int64_t o = 0; o < out; ++o)
      for (int64_t i = 0; i < in; ++i) {
        double acc = 0.0;
        for (int64_t k = 0; k < r; ++k)
          acc += double(down.at(i, k)) * double(up.at(k, o));
        w.at(o, i) = S(double(w.at(o, i)) + scale * acc);
      }
    return w;
  }
};

// Pre-norm transformer block: rotary attention + MLP, each residual, with
// optional adaptive scale/shift conditioning and optional adapters on the
// four attention projections.
template <class S>
struct TransformerBlock {
  LoraLinear<S> wq, wk, wv, wo;
  LinearLayer<S> mlp1, mlp2;
  LinearLayer<S> ada;  // [D] -> [4D]: shifts/scales for the two sub-layers
  RopeLayout rope;
  bool with_ada = false;

  TransformerBlock() = default;
  TransformerBlock(int64_t dim, int64_t lora_rank, double lora_alpha,
                   bool ada_cond, Rng& rng)
      : wq(dim, dim, lora_rank, lora_alpha, rng),
        wk(dim, dim, lora_rank, lora_alpha, rng),
        wv(dim, dim, lora_rank, lora_alpha, rng),
        wo(dim, dim, lora_rank, lora_alpha, rng),
        mlp1(dim, 4 * dim, rng),
        mlp2(4 * dim, dim, rng),
        with_ada(ada_cond) {
    if (with_ada) {
      ada = LinearLayer<S>(dim, 4 * dim, rng);
      ada.w.value().fill(S(0));  // conditioning starts as the identity
    }
  }

  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    wq.register_params(ps, prefix + ".wq");
    wk.register_params(ps, prefix + ".wk");
    wv.register_params(ps, prefix + ".wv");
    wo.register_params(ps, prefix + ".wo");
    mlp1.register_params(ps, prefix + ".mlp1");
    mlp2.register_params(ps, prefix + ".mlp2");
    if (with_ada) ada.register_params(ps, prefix + ".ada");
  }

  Var<S> forward(const Var<S>& x, const Tensor<S>& coords,
                 const Var<S>& cond) const {
    Var<S> sa, ba, sm, bm;
    if (with_ada) {
      NEFIC_CHECK(cond.defined(), ConfigError,
                  "conditioned block called without a conditioning vector");
      Var<S> mods = ada.forward(reshape(cond, {1, kModelDim}));
      const int64_t D = kModelDim;
      sa = reshape(slice_cols(mods, 0, D), {D});
      ba = reshape(slice_cols(mods, D, 2 * D), {D});
      sm = reshape(slice_cols(mods, 2 * D, 3 * D), {D});
      bm = reshape(slice_cols(mods, 3 * D, 4 * D), {D});
    }
    Var<S> h = layer_norm(x);
    if (with_ada) h = rowwise_add(rowwise_mul(h, add_scalar(sa, S(1))), ba);
    Var<S> att = attention_rope(wq.forward(h), wk.forward(h), wv.forward(h),
                                coords, rope);
    Var<S> y = add(x, wo.forward(att));
    Var<S> h2 = layer_norm(y);
    if (with_ada) h2 = rowwise_add(rowwise_mul(h2, add_scalar(sm, S(1))), bm);
    return add(y, mlp2.forward(silu(mlp1.forward(h2))));
  }

  void merge_lora() {
    wq.merge();
    wk.merge();
    wv.merge();
    wo.merge();
  }
};

// Position table for the prompt ⊕ anchor ⊕ target sequence over a gh×gw
// patch grid.  Prompt tokens carry sentinel coords and stay unrotated.
template <class S>
Tensor<S> token_coords(int64_t gh, int64_t gw) {
  const int64_t G = gh * gw;
  Tensor<S> coords({kPromptTokens + 2 * G, 3});
  for (int64_t i = 0; i < kPromptTokens; ++i)
    for (int64_t a = 0; a < 3; ++a) coords.at(i, a) = S(-1);
  for (int64_t f = 0; f < 2; ++f)
    for (int64_t r = 0; r < gh; ++r)
      for (int64_t c = 0; c < gw; ++c) {
        const int64_t i = kPromptTokens + f * G + r * gw + c;
        coords.at(i, 0) = S(f);
        coords.at(i, 1) = S(r);
        coords.at(i, 2) = S(c);
      }
  return coords;
}

template <class S>
class DiT {
 public:
  DiT() = default;

  DiT(Rng& rng, int64_t lora_rank, double lora_alpha) {
    token_proj_ = LinearLayer<S>(kPatchSize * kPatchSize * kLatentChannels,
                                 kModelDim, rng);
    prompt_ = Var<S>::leaf(
        Tensor<S>::randn({kPromptTokens, kModelDim}, rng, 0.02), true);
    time1_ = LinearLayer<S>(kModelDim, kModelDim, rng);
    time2_ = LinearLayer<S>(kModelDim, kModelDim, rng);
    head_ = LinearLayer<S>(kModelDim,
                           kPatchSize * kPatchSize * kLatentChannels, rng);
    blocks_.reserve(kNumBlocks);
    for (int64_t i = 0; i < kNumBlocks; ++i)
      blocks_.emplace_back(kModelDim, lora_rank, lora_alpha, true, rng);
  }

  explicit DiT(Rng& rng) : DiT(rng, kDefaultLoraRank, 8.0) {}

  void register_params(ParamStore<S>& ps) {
    token_proj_.register_params(ps, "dit.token_proj");
    ps.add("dit.prompt", &prompt_);
    time1_.register_params(ps, "dit.time1");
    time2_.register_params(ps, "dit.time2");
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].register_params(ps, "dit.blk" + std::to_string(i));
    head_.register_params(ps, "dit.head");
  }

  // Projects one latent frame into token rows (patch order row-major).
  Var<S> embed_frame(const Var<S>& z) const {
    NEFIC_CHECK(z.shape().size() == 4 && z.shape()[0] == 1 &&
                    z.shape()[1] == kLatentChannels &&
                    z.shape()[2] % kPatchSize == 0 &&
                    z.shape()[3] % kPatchSize == 0,
                ShapeError, "embed_frame: bad latent ", shape_str(z.shape()));
    return token_proj_.forward(patchify(z, kPatchSize));
  }

  // Full forward for one sample: returns the v-prediction over the target
  // frame as a latent grid shaped like z_t.
  Var<S> forward(const Var<S>& z_anchor, const Var<S>& z_t, int64_t t) const {
    NEFIC_CHECK(same_shape(z_anchor.value(), z_t.value()), ShapeError,
                "anchor/target latent mismatch: ", shape_str(z_anchor.shape()),
                " vs ", shape_str(z_t.shape()));
    const int64_t gh = z_t.shape()[2] / kPatchSize,
                  gw = z_t.shape()[3] / kPatchSize;
    Var<S> seq = concat_rows(
        prompt_, concat_rows(embed_frame(z_anchor), embed_frame(z_t)));
    return forward_from(seq, token_coords<S>(gh, gw), t, gh, gw);
  }

  // Core forward over an assembled token sequence.  Exposed so tests can
  // rearrange segments; every decode path funnels through here, which is
  // what the forward counter instruments.
  Var<S> forward_from(const Var<S>& seq, const Tensor<S>& coords, int64_t t,
                      int64_t gh, int64_t gw) const {
    const int64_t G = gh * gw, L = kPromptTokens + 2 * G;
    NEFIC_CHECK(seq.shape().size() == 2 && seq.shape()[0] == L &&
                    seq.shape()[1] == kModelDim,
                ShapeError, "forward_from: sequence ", shape_str(seq.shape()),
                " does not match a ", gh, "x", gw, " grid");
    NEFIC_CHECK(t >= 0, ConfigError, "negative timestep");
    ++forwards_;
    Var<S> temb = constant(timestep_embedding<S>(t, kModelDim));
    Var<S> cond = time2_.forward(silu(time1_.forward(reshape(temb, {1, kModelDim}))));
    cond = reshape(cond, {kModelDim});
    Var<S> x = seq;
    for (const auto& blk : blocks_) x = blk.forward(x, coords, cond);
    Var<S> target = slice_rows(layer_norm(x), kPromptTokens + G, L);
    Var<S> out = head_.forward(target);
    return unpatchify(out, 1, kLatentChannels, gh * kPatchSize,
                      gw * kPatchSize, kPatchSize);
  }

  void merge_lora() {
    for (auto& blk : blocks_) blk.merge_lora();
  }

  int64_t forward_count() const { return forwards_; }
  void reset_forward_count() { forwards_ = 0; }

  const Var<S>& prompt() const { return prompt_; }
  const std::vector<TransformerBlock<S>>& blocks() const { return blocks_; }
  std::vector<TransformerBlock<S>>& blocks() { return blocks_; }

 private:
  LinearLayer<S> token_proj_, time1_, time2_, head_;
  Var<S> prompt_;
  std::vector<TransformerBlock<S>> blocks_;
  mutable int64_t forwards_ = 0;
};

// Maps the decoder-side codec tap to a latent-space starting point for the
// one-step decode: per-position tokens through two plain transformer blocks.
template <class S>
class BypassRefiner {
 public:
  BypassRefiner() = default;

  explicit BypassRefiner(Rng& rng) {
    proj_in_ = LinearLayer<S>(96, kModelDim, rng);
    proj_out_ = LinearLayer<S>(kModelDim, kLatentChannels, rng);
    blocks_.reserve(2);
    for (int i = 0; i < 2; ++i) blocks_.emplace_back(kModelDim, 0, 0.0, false, rng);
  }

  void register_params(ParamStore<S>& ps) {
    proj_in_.register_params(ps, "refiner.proj_in");
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].register_params(ps, "refiner.blk" + std::to_string(i));
    proj_out_.register_params(ps, "refiner.proj_out");
  }

  Var<S> forward(const Var<S>& h_dec) const {
    NEFIC_CHECK(h_dec.shape().size() == 4 && h_dec.shape()[0] == 1 &&
                    h_dec.shape()[1] == 96,
                ShapeError, "bypass refiner expects 1x96xHxW, got ",
                shape_str(h_dec.shape()));
    const int64_t H = h_dec.shape()[2], W = h_dec.shape()[3];
    Tensor<S> coords({H * W, 3});
    for (int64_t r = 0; r < H; ++r)
      for (int64_t c = 0; c < W; ++c) {
        coords.at(r * W + c, 0) = S(0);
        coords.at(r * W + c, 1) = S(r);
        coords.at(r * W + c, 2) = S(c);
      }
    Var<S> x = proj_in_.forward(patchify(h_dec, 1));
    for (const auto& blk : blocks_) x = blk.forward(x, coords, Var<S>());
    return unpatchify(proj_out_.forward(layer_norm(x)), 1, kLatentChannels, H,
                      W, 1);
  }

 private:
  LinearLayer<S> proj_in_, proj_out_;
  std::vector<TransformerBlock<S>> blocks_;
};

}  // namespace nefic

// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_MODELS_HPP_
#define NEFIC_MODELS_HPP_

#include <string>

#include "nefic/codec.hpp"
#include "nefic/config.hpp"
#include "nefic/diffusion.hpp"
#include "nefic/dit.hpp"
#include "nefic/schedule.hpp"
#include "nefic/vae.hpp"

namespace nefic {

// Patch discriminator: frozen image-autoencoder features + a lightweight
// trainable head of three convolutions emitting one logit per spatial patch.
template <class S>
struct DiscriminatorHead {
  Conv2dLayer<S> c1, c2, c3;

  DiscriminatorHead() = default;
  explicit DiscriminatorHead(Rng& rng)
      : c1(64, 64, 3, 2, 1, rng), c2(64, 64, 3, 1, 1, rng),
        c3(64, 1, 3, 1, 1, rng) {}

  void register_params(ParamStore<S>& ps) {
    c1.register_params(ps, "disc.c1");
    c2.register_params(ps, "disc.c2");
    c3.register_params(ps, "disc.c3");
  }

  // `f` is the mid-level feature map of the frozen encoder (64ch at 1/4
  // scale); output is a [N,1,H/8,W/8] patch-logit grid.
  Var<S> forward(const Var<S>& f) const {
    Var<S> u = leaky_relu(c1.forward(f));
    u = leaky_relu(c2.forward(u));
    return c3.forward(u);
  }
};

template <class S>
Var<S> disc_logits(const ToyVae<S>& vae, const DiscriminatorHead<S>& head,
                   const Var<S>& x) {
  return head.forward(vae.encoder_features(x)[1]);
}

namespace detail {
template <class C>
C make_seeded(uint64_t seed, uint64_t salt) {
  Rng rng(seed ^ (salt * 0x9E3779B97F4A7C15ull));
  return C(rng);
}
}  // namespace detail

// The full model zoo plus the shared parameter registry. Construction is
// fully determined by the seed; loading a checkpoint then overwrites every
// registered tensor.
template <class S>
struct Models {
  ToyVae<S> vae;
  AnchorCodec<S> codec;
  DiT<S> dit;
  BypassRefiner<S> refiner;
  DiscriminatorHead<S> disc;
  NoiseSchedule sched;
  ParamStore<S> ps;

  explicit Models(uint64_t seed)
      : vae(detail::make_seeded<ToyVae<S>>(seed, 1)),
        codec(detail::make_seeded<AnchorCodec<S>>(seed, 2)),
        dit(detail::make_seeded<DiT<S>>(seed, 3)),
        refiner(detail::make_seeded<BypassRefiner<S>>(seed, 4)),
        disc(detail::make_seeded<DiscriminatorHead<S>>(seed, 5)),
        sched(make_schedule(1000)) {
    vae.register_params(ps);
    codec.register_params(ps);
    dit.register_params(ps);
    refiner.register_params(ps);
    disc.register_params(ps);
  }
};

// Checksum over the parameters selected by a predicate on the name; used to
// prove that everything outside a stage's trainable set stays bit-identical.
template <class S, class Pred>
uint64_t checksum_where(const ParamStore<S>& ps, Pred&& pred) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& e : ps.entries()) {
    if (!pred(e.name)) continue;
    const auto* p =
        reinterpret_cast<const unsigned char*>(e.var->value().data());
    const size_t n = size_t(e.var->numel()) * sizeof(S);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

inline bool name_in_stage_trainables(const std::string& name, StageId stage) {
  const bool is_lora = name.find("lora") != std::string::npos;
  switch (stage) {
    case StageId::kVae:
      return name.rfind("vae.", 0) == 0 &&
             name.rfind("vae.norm", 0) != 0;  // stat buffers are not learned
    case StageId::kBackbone:
      return name.rfind("dit.", 0) == 0 && !is_lora;
    case StageId::kStage1:
      return is_lora || name.rfind("codec.", 0) == 0 || name == "dit.prompt";
    case StageId::kStage2:
      return is_lora || name.rfind("codec.", 0) == 0 || name == "dit.prompt" ||
             name.rfind("refiner.", 0) == 0;
  }
  return false;
}

// Applies the stage's freeze configuration and returns the number of
// trainable parameters (the count `--dry-run` reports). The discriminator
// head is handled separately by its own optimizer during the adversarial
// phase of the final stage.
template <class S>
int64_t configure_trainables(Models<S>& m, StageId stage) {
  m.ps.set_trainable_all(false);
  for (const auto& e : m.ps.entries())
    if (name_in_stage_trainables(e.name, stage))
      e.var->node()->requires_grad = true;
  return m.ps.numel_trainable();
}

// Everything the stage must NOT touch (the discriminator head is exempt in
// the final stage because adversarial training updates it by design).
inline bool name_in_stage_frozen(const std::string& name, StageId stage) {
  if (name_in_stage_trainables(name, stage)) return false;
  if (stage == StageId::kStage2 && name.rfind("disc.", 0) == 0) return false;
  // The normalization buffers are fitted (not gradient-trained) at the end
  // of autoencoder pretraining, so that stage legitimately writes them.
  if (stage == StageId::kVae && name.rfind("vae.norm", 0) == 0) return false;
  return true;
}

template <class S>
uint64_t checksum_stage_frozen(const ParamStore<S>& ps, StageId stage) {
  return checksum_where(
      ps, [&](const std::string& n) { return name_in_stage_frozen(n, stage); });
}

}  // namespace nefic

#endif  // NEFIC_MODELS_HPP_

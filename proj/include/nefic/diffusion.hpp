// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
//
// Samplers built on the v-prediction algebra: the deterministic multi-step
// decoder used while adapting the backbone, and the one-step decode that
// treats the refined bypass latent as a partially denoised state.

#pragma once

#include <cmath>
#include <cstdint>

#include "nefic/autograd.hpp"
#include "nefic/dit.hpp"
#include "nefic/rng.hpp"
#include "nefic/schedule.hpp"

namespace nefic {

inline constexpr int64_t kOneStepT = 500;  // t*, half the schedule

// Deterministic multi-step decode: walk a uniformly spaced descending
// timestep grid from T to 0; at each node predict v, reconstruct the clean
// latent, and re-noise it deterministically to the next grid point.  The
// seed fixes the initial Gaussian draw and nothing else.
template <class S>
Var<S> sample_multistep(const DiT<S>& dit, const Var<S>& z_anchor,
                        const NoiseSchedule& sched, int64_t steps,
                        uint64_t seed) {
  NEFIC_CHECK(steps >= 1 && steps <= sched.T, ConfigError,
              "sampler steps must lie in [1, ", sched.T, "], got ", steps);
  Rng rng(seed);
  Var<S> z = constant(Tensor<S>::randn(z_anchor.shape(), rng));
  for (int64_t i = 0; i < steps; ++i) {
    const int t = int(llround(double(sched.T) * double(steps - i) /
                              double(steps)));
    const int t_next = int(llround(double(sched.T) * double(steps - i - 1) /
                                   double(steps)));
    Var<S> v = dit.forward(z_anchor, z, t);
    Var<S> z0_hat = predict_z0(z, v, t, sched);
    if (t_next == 0) {
      z = z0_hat;
    } else {
      // eps implied by the v parameterization at time t.
      Var<S> eps_hat = add(mul_scalar(z, S(sched.sigma[size_t(t)])),
                           mul_scalar(v, S(sched.alpha[size_t(t)])));
      z = add_noise(z0_hat, t_next, eps_hat, sched);
    }
  }
  return z;
}

// One-step decode: the bypass latent stands in for z_{t*} directly (no noise
// is added), and a single backbone evaluation yields the clean latent.
template <class S>
Var<S> decode_one_step(const DiT<S>& dit, const Var<S>& z_anchor,
                       const Var<S>& z_bypass, const NoiseSchedule& sched,
                       int t_star = int(kOneStepT)) {
  NEFIC_CHECK(t_star >= 0 && t_star <= sched.T, ConfigError,
              "t* must lie in [0, ", sched.T, "], got ", t_star);
  Var<S> v = dit.forward(z_anchor, z_bypass, t_star);
  return predict_z0(z_bypass, v, t_star, sched);
}

}  // namespace nefic

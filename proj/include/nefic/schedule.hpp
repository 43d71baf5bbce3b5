// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_SCHEDULE_HPP_
#define NEFIC_SCHEDULE_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "nefic/autograd.hpp"

namespace nefic {

// Variance-preserving noise schedule: alpha_t^2 + sigma_t^2 = 1 for all t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;  // [0..T]
  std::vector<double> sigma;  // [0..T]
};

inline NoiseSchedule make_schedule(int T, const std::string& kind = "cosine") {
  NEFIC_CHECK(kind == "cosine", ConfigError, "unsupported schedule kind '",
              kind, "'");
  NEFIC_CHECK(T >= 1, ConfigError, "schedule needs T >= 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha.resize(size_t(T) + 1);
  s.sigma.resize(size_t(T) + 1);
  const double pi = 3.14159265358979323846;
  for (int t = 0; t <= T; ++t) {
    const double phase = pi * double(t) / (2.0 * double(T));
    s.alpha[size_t(t)] = std::cos(phase);
    s.sigma[size_t(t)] = std::sin(phase);
  }
  return s;
}

namespace detail {
inline void check_t(const NoiseSchedule& s, int t) {
  NEFIC_CHECK(t >= 0 && t <= s.T, ConfigError, "timestep ", t,
              " outside [0,", s.T, "]");
}
}  // namespace detail

// z_t = alpha_t * z0 + sigma_t * eps
template <class S>
Var<S> add_noise(const Var<S>& z0, int t, const Var<S>& eps,
                 const NoiseSchedule& sched) {
  detail::check_t(sched, t);
  NEFIC_CHECK(same_shape(z0.value(), eps.value()), ShapeError,
              "add_noise: z0 ", shape_str(z0.shape()), " vs eps ",
              shape_str(eps.shape()));
  return add(mul_scalar(z0, S(sched.alpha[size_t(t)])),
             mul_scalar(eps, S(sched.sigma[size_t(t)])));
}

// zhat0 = alpha_t * z_t - sigma_t * v
template <class S>
Var<S> predict_z0(const Var<S>& zt, const Var<S>& v, int t,
                  const NoiseSchedule& sched) {
  detail::check_t(sched, t);
  NEFIC_CHECK(same_shape(zt.value(), v.value()), ShapeError,
              "predict_z0: z_t ", shape_str(zt.shape()), " vs v ",
              shape_str(v.shape()));
  return sub(mul_scalar(zt, S(sched.alpha[size_t(t)])),
             mul_scalar(v, S(sched.sigma[size_t(t)])));
}

// Regression target of v-prediction: v* = alpha_t * eps - sigma_t * z0
template <class S>
Var<S> target_v(const Var<S>& z0, const Var<S>& eps, int t,
                const NoiseSchedule& sched) {
  detail::check_t(sched, t);
  return sub(mul_scalar(eps, S(sched.alpha[size_t(t)])),
             mul_scalar(z0, S(sched.sigma[size_t(t)])));
}

}  // namespace nefic

#endif  // NEFIC_SCHEDULE_HPP_

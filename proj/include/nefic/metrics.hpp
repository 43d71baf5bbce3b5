// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_METRICS_HPP_
#define NEFIC_METRICS_HPP_

#include <array>
#include <cmath>
#include <vector>

#include "nefic/tensor.hpp"

namespace nefic {

// Peak signal-to-noise ratio over [0,1] images, capped at 100 dB.
template <class S>
double psnr(const Tensor<S>& x, const Tensor<S>& y) {
  NEFIC_CHECK(same_shape(x, y), ShapeError, "psnr: ", shape_str(x.shape()),
              " vs ", shape_str(y.shape()));
  double mse = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double d = double(x[i]) - double(y[i]);
    mse += d * d;
  }
  mse /= double(x.numel());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

// 11-tap Gaussian window, sigma 1.5 (the standard structural-similarity one).
inline const std::array<double, 11>& ssim_window() {
  static const std::array<double, 11> w = [] {
    std::array<double, 11> v{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      v[size_t(i)] = std::exp(-double((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
      sum += v[size_t(i)];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return w;
}

// Separable valid-mode Gaussian filter of a single-channel plane.
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img,
                                              int64_t H, int64_t W) {
  const auto& w = ssim_window();
  const int64_t OH = H - 10, OW = W - 10;
  std::vector<double> tmp(size_t(H * OW));
  for (int64_t r = 0; r < H; ++r)
    for (int64_t c = 0; c < OW; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += w[size_t(k)] * img[size_t(r * W + c + k)];
      tmp[size_t(r * OW + c)] = acc;
    }
  std::vector<double> out(size_t(OH * OW));
  for (int64_t r = 0; r < OH; ++r)
    for (int64_t c = 0; c < OW; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 11; ++k) acc += w[size_t(k)] * tmp[size_t((r + k) * OW + c)];
      out[size_t(r * OW + c)] = acc;
    }
  return out;
}

// Mean luminance term and mean contrast-structure term at one scale.
inline void ssim_scale(const std::vector<double>& x, const std::vector<double>& y,
                       int64_t H, int64_t W, double* mean_l, double* mean_cs) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const size_t n = size_t(H * W);
  std::vector<double> xx(n), yy(n), xy(n);
  for (size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = gauss_filter_valid(x, H, W);
  const auto my = gauss_filter_valid(y, H, W);
  const auto mxx = gauss_filter_valid(xx, H, W);
  const auto myy = gauss_filter_valid(yy, H, W);
  const auto mxy = gauss_filter_valid(xy, H, W);
  double sl = 0.0, scs = 0.0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    sl += (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    scs += (2.0 * cxy + c2) / (vx + vy + c2);
  }
  *mean_l = sl / double(mx.size());
  *mean_cs = scs / double(mx.size());
}

inline std::vector<double> downsample2(const std::vector<double>& img, int64_t H,
                                       int64_t W) {
  const int64_t OH = H / 2, OW = W / 2;
  std::vector<double> out(size_t(OH * OW));
  for (int64_t r = 0; r < OH; ++r)
    for (int64_t c = 0; c < OW; ++c)
      out[size_t(r * OW + c)] =
          0.25 * (img[size_t(2 * r * W + 2 * c)] + img[size_t(2 * r * W + 2 * c + 1)] +
                  img[size_t((2 * r + 1) * W + 2 * c)] +
                  img[size_t((2 * r + 1) * W + 2 * c + 1)]);
  return out;
}

}  // namespace detail

// Multi-scale structural similarity over [C,H,W] images in [0,1]. Uses the
// standard 5-scale weights; images too small for 5 dyadic scales fall back to
// the deepest feasible scale count with the weight prefix renormalized.
// Channels are scored independently and averaged, so any simultaneous channel
// permutation of both inputs leaves the value unchanged.
template <class S>
double msssim(const Tensor<S>& x, const Tensor<S>& y) {
  NEFIC_CHECK(same_shape(x, y), ShapeError, "msssim: ", shape_str(x.shape()),
              " vs ", shape_str(y.shape()));
  NEFIC_CHECK(x.shape().size() == 3, ShapeError,
              "msssim: need [C,H,W], got ", shape_str(x.shape()));
  const int64_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];

  static const std::array<double, 5> weights = {0.0448, 0.2856, 0.3001, 0.2363,
                                                0.1333};
  // Deepest scale must still fit the 11-tap window.
  int scales = 0;
  for (int n = 1; n <= 5; ++n)
    if (std::min(H, W) / (int64_t(1) << (n - 1)) >= 11) scales = n;
  NEFIC_CHECK(scales >= 1, EvalError, "msssim: image ", shape_str(x.shape()),
              " too small for the 11-tap window");
  double wsum = 0.0;
  for (int j = 0; j < scales; ++j) wsum += weights[size_t(j)];

  double total = 0.0;
  for (int64_t ch = 0; ch < C; ++ch) {
    std::vector<double> px(size_t(H * W)), py(size_t(H * W));
    for (int64_t i = 0; i < H * W; ++i) {
      px[size_t(i)] = double(x[ch * H * W + i]);
      py[size_t(i)] = double(y[ch * H * W + i]);
    }
    int64_t h = H, w = W;
    double value = 1.0;
    for (int j = 0; j < scales; ++j) {
      double ml = 0.0, mcs = 0.0;
      detail::ssim_scale(px, py, h, w, &ml, &mcs);
      const double wj = weights[size_t(j)] / wsum;
      if (j == scales - 1) {
        value *= std::pow(std::max(ml, 0.0), wj) * std::pow(std::max(mcs, 0.0), wj);
      } else {
        value *= std::pow(std::max(mcs, 0.0), wj);
        px = detail::downsample2(px, h, w);
        py = detail::downsample2(py, h, w);
        h /= 2;
        w /= 2;
      }
    }
    total += value;
  }
  return total / double(C);
}

}  // namespace nefic

#endif  // NEFIC_METRICS_HPP_

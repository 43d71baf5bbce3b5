// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "nefic/bdrate.hpp"
#include "nefic/metrics.hpp"
#include "nefic/rng.hpp"

using namespace nefic;
using T = Tensor<double>;

namespace {

RDCurve make_curve(const std::string& label,
                   std::initializer_list<std::pair<double, double>> pts,
                   const std::string& metric = "psnr") {
  RDCurve c;
  c.label = label;
  for (const auto& [bpp, q] : pts) {
    RDPoint p;
    p.bpp = bpp;
    p.metrics[metric] = q;
    c.points.push_back(p);
  }
  return c;
}

RDCurve scale_bpp(RDCurve c, double f) {
  for (auto& p : c.points) p.bpp *= f;
  return c;
}

}  // namespace

TEST(Psnr, CapAndLogArithmetic) {
  Rng rng(1);
  T x = T::rand_uniform({3, 8, 8}, rng, 0.0, 1.0);
  EXPECT_EQ(psnr(x, x), 100.0);
  T zeros = T::zeros({3, 4, 4});
  T ones = T::full({3, 4, 4}, 1.0);
  EXPECT_NEAR(psnr(zeros, ones), 0.0, 1e-12);
  T y = x.clone();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += 0.1;  // MSE = 0.01
  EXPECT_NEAR(psnr(x, y), 20.0, 1e-9);
  EXPECT_THROW(psnr(x, zeros), ShapeError);
}

TEST(Msssim, IdenticalImagesScoreOne) {
  Rng rng(2);
  T x = T::rand_uniform({3, 64, 64}, rng, 0.0, 1.0);
  EXPECT_NEAR(msssim(x, x), 1.0, 1e-9);
}

TEST(Msssim, IndependentNoiseScoresLow) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    T x = T::rand_uniform({3, 64, 64}, rng, 0.0, 1.0);
    T y = T::rand_uniform({3, 64, 64}, rng, 0.0, 1.0);
    EXPECT_LT(msssim(x, y), 0.3) << "trial " << trial;
  }
}

TEST(Msssim, ChannelPermutationInvariance) {
  Rng rng(4);
  T x = T::rand_uniform({3, 48, 48}, rng, 0.0, 1.0);
  T y = x.clone();
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::min(1.0, y[i] + 0.02 * ((i % 7) / 7.0));
  auto permute = [](const T& t) {
    T out(t.shape());
    const int64_t hw = t.shape()[1] * t.shape()[2];
    const int perm[3] = {2, 0, 1};
    for (int c = 0; c < 3; ++c)
      std::copy_n(t.data() + c * hw, hw, out.data() + perm[c] * hw);
    return out;
  };
  EXPECT_DOUBLE_EQ(msssim(x, y), msssim(permute(x), permute(y)));
}

TEST(Msssim, SmallImagesFallBackToFewerScales) {
  Rng rng(5);
  T x = T::rand_uniform({3, 32, 32}, rng, 0.0, 1.0);
  T y = x.clone();
  for (int64_t i = 0; i < y.numel(); ++i)
    y[i] = std::clamp(y[i] + 0.1 * ((i % 5) / 5.0 - 0.4), 0.0, 1.0);
  const double v = msssim(x, y);  // 32x32 supports 2 dyadic scales
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
  EXPECT_NEAR(msssim(x, x), 1.0, 1e-9);
  T tiny = T::zeros({3, 8, 8});
  EXPECT_THROW(msssim(tiny, tiny), EvalError);
}

TEST(Msssim, DegradationOrdersSensibly) {
  Rng rng(6);
  T x = T::zeros({1, 64, 64});
  for (int64_t r = 0; r < 64; ++r)
    for (int64_t c = 0; c < 64; ++c)
      x[r * 64 + c] = 0.5 + 0.4 * std::sin(r * 0.3) * std::cos(c * 0.2);
  T mild = x.clone(), heavy = x.clone();
  for (int64_t i = 0; i < x.numel(); ++i) {
    mild[i] = std::clamp(mild[i] + 0.02 * rng.normal(), 0.0, 1.0);
    heavy[i] = std::clamp(heavy[i] + 0.25 * rng.normal(), 0.0, 1.0);
  }
  EXPECT_GT(msssim(x, mild), msssim(x, heavy));
}

TEST(BdRate, IdenticalCurvesGiveZero) {
  RDCurve a = make_curve("a", {{0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  EXPECT_NEAR(bd_rate(a, a, "psnr"), 0.0, 1e-9);
}

TEST(BdRate, DoubledRateIsPlusHundredPercent) {
  RDCurve a = make_curve("a", {{0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  EXPECT_NEAR(bd_rate(a, scale_bpp(a, 2.0), "psnr"), 100.0, 1e-6);
}

TEST(BdRate, SeventyPercentRateIsMinusThirty) {
  RDCurve a = make_curve("a", {{0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  EXPECT_NEAR(bd_rate(a, scale_bpp(a, 0.7), "psnr"), -30.0, 1e-9);
}

TEST(BdRate, MatchesDenseNumericIntegrationOnDistinctCurves) {
  RDCurve a = make_curve("a", {{0.01, 27.5}, {0.022, 29.8}, {0.041, 31.9}, {0.085, 34.2}});
  RDCurve b = make_curve("b", {{0.008, 26.9}, {0.019, 30.1}, {0.044, 32.4}, {0.07, 33.5}});
  const double got = bd_rate(a, b, "psnr");

  // Oracle: same knots, Simpson integration of the interpolants on a dense grid.
  auto knots = [](const RDCurve& c) {
    std::vector<double> q, r;
    for (const auto& p : c.points) {
      q.push_back(p.metrics.at("psnr"));
      r.push_back(std::log10(p.bpp));
    }
    return Pchip(q, r);
  };
  const Pchip fa = knots(a), fb = knots(b);
  const double lo = std::max(fa.x_min(), fb.x_min());
  const double hi = std::min(fa.x_max(), fb.x_max());
  const int n = 200000;  // even
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double q = lo + (hi - lo) * double(i) / n;
    const double f = fb.eval(q) - fa.eval(q);
    acc += (i == 0 || i == n) ? f : (i % 2 ? 4.0 * f : 2.0 * f);
  }
  const double delta = acc * (hi - lo) / (3.0 * n) / (hi - lo);
  const double want = 100.0 * (std::pow(10.0, delta) - 1.0);
  EXPECT_NEAR(got, want, 1e-6);
}

TEST(BdRate, AntisymmetryOfRateRatios) {
  RDCurve a = make_curve("a", {{0.01, 27.5}, {0.022, 29.8}, {0.041, 31.9}, {0.085, 34.2}});
  RDCurve b = make_curve("b", {{0.008, 26.9}, {0.019, 30.1}, {0.044, 32.4}, {0.07, 33.5}});
  const double ab = bd_rate(a, b, "psnr");
  const double ba = bd_rate(b, a, "psnr");
  EXPECT_NEAR(ab, -ba / (1.0 + ba / 100.0), 0.1);
}

TEST(BdRate, ScaleInvariance) {
  RDCurve a = make_curve("a", {{0.01, 27.5}, {0.022, 29.8}, {0.041, 31.9}, {0.085, 34.2}});
  RDCurve b = make_curve("b", {{0.008, 26.9}, {0.019, 30.1}, {0.044, 32.4}, {0.07, 33.5}});
  const double base = bd_rate(a, b, "psnr");
  const double scaled = bd_rate(scale_bpp(a, 37.0), scale_bpp(b, 37.0), "psnr");
  EXPECT_NEAR(base, scaled, 1e-12);
}

TEST(BdRate, NoQualityOverlapIsAnError) {
  RDCurve a = make_curve("a", {{0.01, 20}, {0.02, 22}, {0.04, 24}, {0.08, 26}});
  RDCurve b = make_curve("b", {{0.01, 30}, {0.02, 32}, {0.04, 34}, {0.08, 36}});
  EXPECT_THROW(bd_rate(a, b, "psnr"), EvalError);
}

TEST(BdRate, NonMonotoneQualityWarnsAndRepairs) {
  RDCurve a = make_curve("a", {{0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  RDCurve b = make_curve("b", {{0.01, 28}, {0.02, 31}, {0.04, 30.5}, {0.08, 34}});
  std::string warning;
  const double v = bd_rate(a, b, "psnr", &warning);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NE(warning.find("monotone"), std::string::npos);
  std::string no_warning;
  bd_rate(a, scale_bpp(a, 1.5), "psnr", &no_warning);
  EXPECT_TRUE(no_warning.empty());
}

TEST(BdRate, InputValidation) {
  RDCurve a = make_curve("a", {{0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  RDCurve dup = make_curve("dup", {{0.01, 28}, {0.01, 30}, {0.04, 32}, {0.08, 34}});
  EXPECT_THROW(bd_rate(a, dup, "psnr"), EvalError);
  RDCurve neg = make_curve("neg", {{-0.01, 28}, {0.02, 30}, {0.04, 32}, {0.08, 34}});
  EXPECT_THROW(bd_rate(a, neg, "psnr"), EvalError);
  EXPECT_THROW(bd_rate(a, a, "msssim"), EvalError);  // metric absent
}

TEST(Pchip, InterpolatesKnotsAndStaysMonotone) {
  const std::vector<double> x = {28, 30, 32, 34};
  const std::vector<double> y = {-2.0, -1.7, -1.39, -1.1};
  const Pchip f(x, y);
  for (size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(f.eval(x[i]), y[i], 1e-12);
  double prev = f.eval(28.0);
  for (int i = 1; i <= 600; ++i) {
    const double q = 28.0 + 6.0 * i / 600.0;
    const double v = f.eval(q);
    EXPECT_GE(v, prev - 1e-12);
    prev = v;
  }
  EXPECT_THROW(f.eval(27.0), EvalError);
  EXPECT_THROW(Pchip({28.0}, {1.0}), EvalError);
}

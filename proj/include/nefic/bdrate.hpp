// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_BDRATE_HPP_
#define NEFIC_BDRATE_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nefic/common.hpp"

namespace nefic {

struct RDPoint {
  double bpp = 0.0;
  std::map<std::string, double> metrics;  // psnr, msssim, proxy, ...
};

struct RDCurve {
  std::string label;
  std::vector<RDPoint> points;  // sorted by bpp, strictly increasing
};

// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes) with
// an exact closed-form integral; used for rate curves log10(bpp) as a
// function of quality.
class Pchip {
 public:
  Pchip(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)) {
    const size_t n = x_.size();
    NEFIC_CHECK(n >= 2 && y_.size() == n, EvalError,
                "interpolation needs >= 2 points");
    for (size_t i = 1; i < n; ++i)
      NEFIC_CHECK(x_[i] > x_[i - 1], EvalError,
                  "interpolation abscissae must increase strictly");
    m_.resize(n);
    std::vector<double> h(n - 1), d(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      d[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    if (n == 2) {
      m_[0] = m_[1] = d[0];
      return;
    }
    for (size_t i = 1; i + 1 < n; ++i) {
      if (d[i - 1] * d[i] <= 0.0) {
        m_[i] = 0.0;
      } else {
        const double w1 = 2.0 * h[i] + h[i - 1];
        const double w2 = h[i] + 2.0 * h[i - 1];
        m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
      }
    }
    m_[0] = edge_slope(h[0], h[1], d[0], d[1]);
    m_[n - 1] = edge_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
  }

  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }

  double eval(double q) const {
    NEFIC_CHECK(q >= x_.front() - 1e-12 && q <= x_.back() + 1e-12, EvalError,
                "interpolant evaluated outside its knot range");
    const size_t k = segment(q);
    const double h = x_[k + 1] - x_[k];
    const double u = (q - x_[k]) / h;
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * y_[k] + (u3 - 2 * u2 + u) * h * m_[k] +
           (-2 * u3 + 3 * u2) * y_[k + 1] + (u3 - u2) * h * m_[k + 1];
  }

  // Exact integral over [a,b] within the knot range.
  double integrate(double a, double b) const {
    NEFIC_CHECK(a <= b, EvalError, "integration bounds reversed");
    double acc = 0.0;
    for (size_t k = 0; k + 1 < x_.size(); ++k) {
      const double lo = std::max(a, x_[k]);
      const double hi = std::min(b, x_[k + 1]);
      if (lo >= hi) continue;
      const double h = x_[k + 1] - x_[k];
      const double ua = (lo - x_[k]) / h, ub = (hi - x_[k]) / h;
      // Antiderivatives of the Hermite basis in u.
      auto H00 = [](double u) { return 0.5 * u * u * u * u - u * u * u + u; };
      auto H10 = [](double u) {
        return 0.25 * u * u * u * u - 2.0 / 3.0 * u * u * u + 0.5 * u * u;
      };
      auto H01 = [](double u) { return -0.5 * u * u * u * u + u * u * u; };
      auto H11 = [](double u) {
        return 0.25 * u * u * u * u - u * u * u / 3.0;
      };
      acc += h * (y_[k] * (H00(ub) - H00(ua)) + h * m_[k] * (H10(ub) - H10(ua)) +
                  y_[k + 1] * (H01(ub) - H01(ua)) +
                  h * m_[k + 1] * (H11(ub) - H11(ua)));
    }
    return acc;
  }

 private:
  static double edge_slope(double h0, double h1, double d0, double d1) {
    double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (m * d0 <= 0.0)
      m = 0.0;
    else if (d0 * d1 < 0.0 && std::abs(m) > 3.0 * std::abs(d0))
      m = 3.0 * d0;
    return m;
  }

  size_t segment(double q) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), q);
    const size_t k = size_t(std::max<int64_t>(0, (it - x_.begin()) - 1));
    return std::min(k, x_.size() - 2);
  }

  std::vector<double> x_, y_, m_;
};

namespace detail {

// Extracts (quality, log10 bpp) pairs ordered by bpp, repairing any
// non-monotone quality by pool-adjacent-violators. Returns true if repair
// was needed.
inline bool rd_to_knots(const RDCurve& curve, const std::string& metric,
                        std::vector<double>* q, std::vector<double>* r) {
  NEFIC_CHECK(!curve.points.empty(), EvalError, "empty rate curve '",
              curve.label, "'");
  std::vector<std::pair<double, double>> pts;  // (bpp, quality)
  for (const auto& p : curve.points) {
    NEFIC_CHECK(p.bpp > 0.0, EvalError, "rate curve '", curve.label,
                "' has non-positive bpp");
    const auto it = p.metrics.find(metric);
    NEFIC_CHECK(it != p.metrics.end(), EvalError, "rate curve '", curve.label,
                "' lacks metric '", metric, "'");
    pts.emplace_back(p.bpp, it->second);
  }
  std::sort(pts.begin(), pts.end());
  for (size_t i = 1; i < pts.size(); ++i)
    NEFIC_CHECK(pts[i].first > pts[i - 1].first, EvalError, "rate curve '",
                curve.label, "' has duplicate bpp values");

  // Pool adjacent violators on quality (must be non-decreasing with bpp).
  bool repaired = false;
  struct Block {
    double qsum, rsum;
    int n;
  };
  std::vector<Block> blocks;
  for (const auto& [bpp, quality] : pts) {
    blocks.push_back({quality, std::log10(bpp), 1});
    while (blocks.size() >= 2) {
      auto& a = blocks[blocks.size() - 2];
      auto& b = blocks.back();
      if (a.qsum / a.n <= b.qsum / b.n) break;
      repaired = true;
      a.qsum += b.qsum;
      a.rsum += b.rsum;
      a.n += b.n;
      blocks.pop_back();
    }
  }
  q->clear();
  r->clear();
  for (const auto& blk : blocks) {
    const double qv = blk.qsum / blk.n, rv = blk.rsum / blk.n;
    if (!q->empty() && qv <= q->back() + 1e-12) {
      // merge exact ties produced by pooling
      r->back() = 0.5 * (r->back() + rv);
      repaired = true;
      continue;
    }
    q->push_back(qv);
    r->push_back(rv);
  }
  NEFIC_CHECK(q->size() >= 2, EvalError, "rate curve '", curve.label,
              "' degenerates to fewer than 2 distinct quality levels");
  return repaired;
}

}  // namespace detail

// Bjontegaard-delta rate of `test` against `anchor` on the given metric,
// in percent; negative means the test curve needs fewer bits. Piecewise-cubic
// interpolation of log10(bpp) over quality, averaged over the overlapping
// quality interval with an exact integral.
inline double bd_rate(const RDCurve& anchor, const RDCurve& test,
                      const std::string& metric,
                      std::string* warning = nullptr) {
  std::vector<double> qa, ra, qt, rt;
  const bool fix_a = detail::rd_to_knots(anchor, metric, &qa, &ra);
  const bool fix_t = detail::rd_to_knots(test, metric, &qt, &rt);
  if (warning) {
    warning->clear();
    if (fix_a)
      *warning += "curve '" + anchor.label +
                  "' was not monotone in quality; applied monotone regression. ";
    if (fix_t)
      *warning += "curve '" + test.label +
                  "' was not monotone in quality; applied monotone regression. ";
  }
  const Pchip fa(qa, ra), ft(qt, rt);
  const double lo = std::max(fa.x_min(), ft.x_min());
  const double hi = std::min(fa.x_max(), ft.x_max());
  NEFIC_CHECK(lo < hi, EvalError, "rate curves share no quality overlap ([",
              fa.x_min(), ",", fa.x_max(), "] vs [", ft.x_min(), ",",
              ft.x_max(), "])");
  const double delta = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
  return 100.0 * (std::pow(10.0, delta) - 1.0);
}

}  // namespace nefic

#endif  // NEFIC_BDRATE_HPP_

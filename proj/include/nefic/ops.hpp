// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_OPS_HPP_
#define NEFIC_OPS_HPP_

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "nefic/autograd.hpp"

namespace nefic {

namespace eig {
template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
Eigen::Map<MatRM<S>> map(Tensor<S>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<MatRM<S>>(t.data(), rows, cols);
}
template <class S>
Eigen::Map<const MatRM<S>> cmap(const Tensor<S>& t, int64_t rows, int64_t cols) {
  return Eigen::Map<const MatRM<S>>(t.data(), rows, cols);
}
}  // namespace eig

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

// y[M,N] = a[M,K] * b[K,N]
template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(a.shape().size() == 2 && b.shape().size() == 2 &&
                  a.shape()[1] == b.shape()[0],
              ShapeError, "matmul: ", shape_str(a.shape()), " x ",
              shape_str(b.shape()));
  const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  Tensor<S> out({M, N});
  eig::map(out, M, N).noalias() = eig::cmap(a.value(), M, K) * eig::cmap(b.value(), K, N);
  return make_node<S>(std::move(out), {a, b}, [a, b, M, K, N](NodeT<S>& n) {
    auto gy = eig::cmap(n.grad, M, N);
    if (a.requires_grad()) {
      eig::map(a.node()->ensure_grad(), M, K).noalias() +=
          gy * eig::cmap(b.value(), K, N).transpose();
    }
    if (b.requires_grad()) {
      eig::map(b.node()->ensure_grad(), K, N).noalias() +=
          eig::cmap(a.value(), M, K).transpose() * gy;
    }
  });
}

// x[.., in] * w[out, in]^T + b[out]; leading dims of x are flattened.
template <class S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b = Var<S>()) {
  NEFIC_CHECK(w.shape().size() == 2, ShapeError, "linear: weight must be 2-d");
  const int64_t in = w.shape()[1], out = w.shape()[0];
  NEFIC_CHECK(!x.shape().empty() && x.shape().back() == in, ShapeError,
              "linear: x ", shape_str(x.shape()), " vs weight ",
              shape_str(w.shape()));
  const int64_t M = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out;
  Tensor<S> y(out_shape);
  eig::map(y, M, out).noalias() =
      eig::cmap(x.value(), M, in) * eig::cmap(w.value(), out, in).transpose();
  if (b.defined()) {
    NEFIC_CHECK(b.numel() == out, ShapeError, "linear: bias size");
    const S* pb = b.value().data();
    S* py = y.data();
    for (int64_t m = 0; m < M; ++m)
      for (int64_t o = 0; o < out; ++o) py[m * out + o] += pb[o];
  }
  std::vector<Var<S>> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  return make_node<S>(std::move(y), std::move(ins),
                      [x, w, b, M, in, out](NodeT<S>& n) {
    auto gy = eig::cmap(n.grad, M, out);
    if (x.requires_grad()) {
      eig::map(x.node()->ensure_grad(), M, in).noalias() +=
          gy * eig::cmap(w.value(), out, in);
    }
    if (w.requires_grad()) {
      eig::map(w.node()->ensure_grad(), out, in).noalias() +=
          gy.transpose() * eig::cmap(x.value(), M, in);
    }
    if (b.defined() && b.requires_grad()) {
      S* gb = b.node()->ensure_grad().data();
      const S* pg = n.grad.data();
      for (int64_t m = 0; m < M; ++m)
        for (int64_t o = 0; o < out; ++o) gb[o] += pg[m * out + o];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM). x:[N,C,H,W] w:[OC,C,kh,kw] b:[OC]
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void im2col(const S* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t OH, int64_t OW, S* col) {
  // col: [C*kh*kw, OH*OW] row-major
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        S* crow = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) {
            for (int64_t ow = 0; ow < OW; ++ow) crow[oh * OW + ow] = S(0);
            continue;
          }
          const S* xrow = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t iw = ow * stride - pad + j;
            crow[oh * OW + ow] = (iw >= 0 && iw < W) ? xrow[iw] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_accum(const S* col, int64_t C, int64_t H, int64_t W, int64_t kh,
                  int64_t kw, int64_t stride, int64_t pad, int64_t OH,
                  int64_t OW, S* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const S* crow = col + ((c * kh + i) * kw + j) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          const int64_t ih = oh * stride - pad + i;
          if (ih < 0 || ih >= H) continue;
          S* xrow = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            const int64_t iw = ow * stride - pad + j;
            if (iw >= 0 && iw < W) xrow[iw] += crow[oh * OW + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b,
              int64_t stride = 1, int64_t pad = 0) {
  NEFIC_CHECK(x.shape().size() == 4 && w.shape().size() == 4, ShapeError,
              "conv2d: x ", shape_str(x.shape()), " w ", shape_str(w.shape()));
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                W = x.shape()[3];
  const int64_t OC = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  NEFIC_CHECK(w.shape()[1] == C, ShapeError, "conv2d: channel mismatch ",
              shape_str(x.shape()), " vs ", shape_str(w.shape()));
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  NEFIC_CHECK(OH > 0 && OW > 0, ShapeError, "conv2d: empty output");
  const int64_t CKK = C * kh * kw, P = OH * OW;

  Tensor<S> y({N, OC, OH, OW});
  Tensor<S> col({CKK, P});  // scratch, recomputed in backward
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * C * H * W, C, H, W, kh, kw, stride,
                   pad, OH, OW, col.data());
    Eigen::Map<eig::MatRM<S>> ym(y.data() + n * OC * P, OC, P);
    ym.noalias() = eig::cmap(w.value(), OC, CKK) * eig::cmap(col, CKK, P);
    if (b.defined()) {
      const S* pb = b.value().data();
      S* py = y.data() + n * OC * P;
      for (int64_t oc = 0; oc < OC; ++oc)
        for (int64_t p = 0; p < P; ++p) py[oc * P + p] += pb[oc];
    }
  }
  std::vector<Var<S>> ins = {x, w};
  if (b.defined()) ins.push_back(b);
  return make_node<S>(
      std::move(y), std::move(ins),
      [x, w, b, N, C, H, W, OC, kh, kw, stride, pad, OH, OW, CKK,
       P](NodeT<S>& n) {
        Tensor<S> col({CKK, P});
        Tensor<S> dcol({CKK, P});
        for (int64_t s = 0; s < N; ++s) {
          Eigen::Map<const eig::MatRM<S>> gy(n.grad.data() + s * OC * P, OC, P);
          if (w.requires_grad()) {
            detail::im2col(x.value().data() + s * C * H * W, C, H, W, kh, kw,
                           stride, pad, OH, OW, col.data());
            eig::map(w.node()->ensure_grad(), OC, CKK).noalias() +=
                gy * eig::cmap(col, CKK, P).transpose();
          }
          if (x.requires_grad()) {
            eig::map(dcol, CKK, P).noalias() =
                eig::cmap(w.value(), OC, CKK).transpose() * gy;
            detail::col2im_accum(dcol.data(), C, H, W, kh, kw, stride, pad, OH,
                                 OW, x.node()->ensure_grad().data() + s * C * H * W);
          }
        }
        if (b.defined() && b.requires_grad()) {
          S* gb = b.node()->ensure_grad().data();
          const S* pg = n.grad.data();
          for (int64_t s = 0; s < N; ++s)
            for (int64_t oc = 0; oc < OC; ++oc)
              for (int64_t p = 0; p < P; ++p)
                gb[oc] += pg[(s * OC + oc) * P + p];
        }
      });
}

// Nearest-neighbour x2 upsampling of [N,C,H,W].
template <class S>
Var<S> upsample_nearest2x(const Var<S>& x) {
  NEFIC_CHECK(x.shape().size() == 4, ShapeError, "upsample: need 4-d");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                W = x.shape()[3];
  Tensor<S> y({N, C, 2 * H, 2 * W});
  const S* px = x.value().data();
  S* py = y.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* xp = px + nc * H * W;
    S* yp = py + nc * 4 * H * W;
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w) {
        const S v = xp[h * W + w];
        S* q = yp + (2 * h) * 2 * W + 2 * w;
        q[0] = v;
        q[1] = v;
        q[2 * W] = v;
        q[2 * W + 1] = v;
      }
  }
  return make_node<S>(std::move(y), {x}, [x, N, C, H, W](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    S* gx = x.node()->ensure_grad().data();
    const S* gy = n.grad.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      S* xp = gx + nc * H * W;
      const S* yp = gy + nc * 4 * H * W;
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w) {
          const S* q = yp + (2 * h) * 2 * W + 2 * w;
          xp[h * W + w] += q[0] + q[1] + q[2 * W] + q[2 * W + 1];
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> reshape(const Var<S>& x, Shape shape) {
  Tensor<S> out = x.value().clone().reshape(shape);
  return make_node<S>(std::move(out), {x}, [x](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    Tensor<S>& g = x.node()->ensure_grad();
    const S* pg = n.grad.data();
    S* pd = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) pd[i] += pg[i];
  });
}

template <class S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(a.shape().size() == 4 && b.shape().size() == 4 &&
                  a.shape()[0] == b.shape()[0] && a.shape()[2] == b.shape()[2] &&
                  a.shape()[3] == b.shape()[3],
              ShapeError, "concat_channels: ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  const int64_t N = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1],
                HW = a.shape()[2] * a.shape()[3];
  Tensor<S> y({N, Ca + Cb, a.shape()[2], a.shape()[3]});
  for (int64_t s = 0; s < N; ++s) {
    std::copy_n(a.value().data() + s * Ca * HW, Ca * HW,
                y.data() + s * (Ca + Cb) * HW);
    std::copy_n(b.value().data() + s * Cb * HW, Cb * HW,
                y.data() + s * (Ca + Cb) * HW + Ca * HW);
  }
  return make_node<S>(std::move(y), {a, b}, [a, b, N, Ca, Cb, HW](NodeT<S>& n) {
    const S* pg = n.grad.data();
    for (int64_t s = 0; s < N; ++s) {
      if (a.requires_grad()) {
        S* ga = a.node()->ensure_grad().data() + s * Ca * HW;
        const S* src = pg + s * (Ca + Cb) * HW;
        for (int64_t i = 0; i < Ca * HW; ++i) ga[i] += src[i];
      }
      if (b.requires_grad()) {
        S* gb = b.node()->ensure_grad().data() + s * Cb * HW;
        const S* src = pg + s * (Ca + Cb) * HW + Ca * HW;
        for (int64_t i = 0; i < Cb * HW; ++i) gb[i] += src[i];
      }
    }
  });
}

// Expands a per-channel vector [C] to a full [N,C,H,W] grid; the backward
// pass reduces over batch and spatial positions.
template <class S>
Var<S> broadcast_channels(const Var<S>& p, int64_t N, int64_t H, int64_t W) {
  NEFIC_CHECK(p.shape().size() == 1, ShapeError, "broadcast_channels: ",
              shape_str(p.shape()));
  const int64_t C = p.shape()[0], HW = H * W;
  Tensor<S> y({N, C, H, W});
  for (int64_t s = 0; s < N; ++s)
    for (int64_t c = 0; c < C; ++c)
      std::fill_n(y.data() + (s * C + c) * HW, HW, p.value()[c]);
  return make_node<S>(std::move(y), {p}, [p, N, C, HW](NodeT<S>& n) {
    if (!p.requires_grad()) return;
    S* gp = p.node()->ensure_grad().data();
    const S* pg = n.grad.data();
    for (int64_t s = 0; s < N; ++s)
      for (int64_t c = 0; c < C; ++c) {
        S acc = S(0);
        const S* src = pg + (s * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += src[i];
        gp[c] += acc;
      }
  });
}

template <class S>
Var<S> slice_channels(const Var<S>& x, int64_t c0, int64_t c1) {
  NEFIC_CHECK(x.shape().size() == 4 && 0 <= c0 && c0 < c1 &&
                  c1 <= x.shape()[1],
              ShapeError, "slice_channels [", c0, ",", c1, ") of ",
              shape_str(x.shape()));
  const int64_t N = x.shape()[0], C = x.shape()[1],
                HW = x.shape()[2] * x.shape()[3], Cs = c1 - c0;
  Tensor<S> y({N, Cs, x.shape()[2], x.shape()[3]});
  for (int64_t s = 0; s < N; ++s)
    std::copy_n(x.value().data() + (s * C + c0) * HW, Cs * HW,
                y.data() + s * Cs * HW);
  return make_node<S>(std::move(y), {x}, [x, N, C, HW, c0, Cs](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const S* pg = n.grad.data();
    S* gx = x.node()->ensure_grad().data();
    for (int64_t s = 0; s < N; ++s) {
      S* dst = gx + (s * C + c0) * HW;
      const S* src = pg + s * Cs * HW;
      for (int64_t i = 0; i < Cs * HW; ++i) dst[i] += src[i];
    }
  });
}

// Concatenate 2-d tensors along rows.
template <class S>
Var<S> concat_rows(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(a.shape().size() == 2 && b.shape().size() == 2 &&
                  a.shape()[1] == b.shape()[1],
              ShapeError, "concat_rows: ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  const int64_t Ra = a.shape()[0], Rb = b.shape()[0], D = a.shape()[1];
  Tensor<S> y({Ra + Rb, D});
  std::copy_n(a.value().data(), Ra * D, y.data());
  std::copy_n(b.value().data(), Rb * D, y.data() + Ra * D);
  return make_node<S>(std::move(y), {a, b}, [a, b, Ra, Rb, D](NodeT<S>& n) {
    const S* pg = n.grad.data();
    if (a.requires_grad()) {
      S* ga = a.node()->ensure_grad().data();
      for (int64_t i = 0; i < Ra * D; ++i) ga[i] += pg[i];
    }
    if (b.requires_grad()) {
      S* gb = b.node()->ensure_grad().data();
      for (int64_t i = 0; i < Rb * D; ++i) gb[i] += pg[Ra * D + i];
    }
  });
}

template <class S>
Var<S> slice_rows(const Var<S>& x, int64_t r0, int64_t r1) {
  NEFIC_CHECK(x.shape().size() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.shape()[0],
              ShapeError, "slice_rows [", r0, ",", r1, ") of ",
              shape_str(x.shape()));
  const int64_t D = x.shape()[1], Rs = r1 - r0;
  Tensor<S> y({Rs, D});
  std::copy_n(x.value().data() + r0 * D, Rs * D, y.data());
  return make_node<S>(std::move(y), {x}, [x, r0, Rs, D](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const S* pg = n.grad.data();
    S* gx = x.node()->ensure_grad().data() + r0 * D;
    for (int64_t i = 0; i < Rs * D; ++i) gx[i] += pg[i];
  });
}

template <class S>
Var<S> slice_cols(const Var<S>& x, int64_t c0, int64_t c1) {
  NEFIC_CHECK(x.shape().size() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.shape()[1],
              ShapeError, "slice_cols [", c0, ",", c1, ") of ",
              shape_str(x.shape()));
  const int64_t R = x.shape()[0], C = x.shape()[1], Cs = c1 - c0;
  Tensor<S> y({R, Cs});
  for (int64_t r = 0; r < R; ++r)
    std::copy_n(x.value().data() + r * C + c0, Cs, y.data() + r * Cs);
  return make_node<S>(std::move(y), {x}, [x, R, C, c0, Cs](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const S* pg = n.grad.data();
    S* gx = x.node()->ensure_grad().data();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t i = 0; i < Cs; ++i) gx[r * C + c0 + i] += pg[r * Cs + i];
  });
}

// out[r,d] = x[r,d] * s[d]
template <class S>
Var<S> rowwise_mul(const Var<S>& x, const Var<S>& s) {
  NEFIC_CHECK(x.shape().size() == 2 && s.numel() == x.shape()[1], ShapeError,
              "rowwise_mul: ", shape_str(x.shape()), " vs ",
              shape_str(s.shape()));
  const int64_t R = x.shape()[0], D = x.shape()[1];
  Tensor<S> y({R, D});
  const S* px = x.value().data();
  const S* ps = s.value().data();
  S* py = y.data();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t d = 0; d < D; ++d) py[r * D + d] = px[r * D + d] * ps[d];
  return make_node<S>(std::move(y), {x, s}, [x, s, R, D](NodeT<S>& n) {
    const S* pg = n.grad.data();
    if (x.requires_grad()) {
      S* gx = x.node()->ensure_grad().data();
      const S* ps = s.value().data();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t d = 0; d < D; ++d) gx[r * D + d] += pg[r * D + d] * ps[d];
    }
    if (s.requires_grad()) {
      S* gs = s.node()->ensure_grad().data();
      const S* px = x.value().data();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t d = 0; d < D; ++d) gs[d] += pg[r * D + d] * px[r * D + d];
    }
  });
}

// out[r,d] = x[r,d] + b[d]
template <class S>
Var<S> rowwise_add(const Var<S>& x, const Var<S>& b) {
  NEFIC_CHECK(x.shape().size() == 2 && b.numel() == x.shape()[1], ShapeError,
              "rowwise_add: ", shape_str(x.shape()), " vs ",
              shape_str(b.shape()));
  const int64_t R = x.shape()[0], D = x.shape()[1];
  Tensor<S> y({R, D});
  const S* px = x.value().data();
  const S* pb = b.value().data();
  S* py = y.data();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t d = 0; d < D; ++d) py[r * D + d] = px[r * D + d] + pb[d];
  return make_node<S>(std::move(y), {x, b}, [x, b, R, D](NodeT<S>& n) {
    const S* pg = n.grad.data();
    if (x.requires_grad()) {
      S* gx = x.node()->ensure_grad().data();
      for (int64_t i = 0; i < R * D; ++i) gx[i] += pg[i];
    }
    if (b.requires_grad()) {
      S* gb = b.node()->ensure_grad().data();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t d = 0; d < D; ++d) gb[d] += pg[r * D + d];
    }
  });
}

// ---------------------------------------------------------------------------
// Patch embedding helpers. Frames [F,C,H,W] <-> tokens [F*(H/p)*(W/p), C*p*p].
// Token feature layout: dim = c*p*p + py*p + px. Token order: frame-major,
// then patch row, then patch col.
// ---------------------------------------------------------------------------

template <class S>
Var<S> patchify(const Var<S>& x, int64_t p) {
  NEFIC_CHECK(x.shape().size() == 4 && x.shape()[2] % p == 0 &&
                  x.shape()[3] % p == 0,
              ShapeError, "patchify: ", shape_str(x.shape()), " patch ", p);
  const int64_t F = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                W = x.shape()[3];
  const int64_t GH = H / p, GW = W / p, T = F * GH * GW, D = C * p * p;
  Tensor<S> y({T, D});
  const S* px = x.value().data();
  S* py = y.data();
  for (int64_t f = 0; f < F; ++f)
    for (int64_t gh = 0; gh < GH; ++gh)
      for (int64_t gw = 0; gw < GW; ++gw) {
        S* tok = py + ((f * GH + gh) * GW + gw) * D;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dy = 0; dy < p; ++dy)
            for (int64_t dx = 0; dx < p; ++dx)
              tok[c * p * p + dy * p + dx] =
                  px[((f * C + c) * H + gh * p + dy) * W + gw * p + dx];
      }
  return make_node<S>(std::move(y), {x}, [x, F, C, H, W, p](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const int64_t GH = H / p, GW = W / p, D = C * p * p;
    const S* pg = n.grad.data();
    S* gx = x.node()->ensure_grad().data();
    for (int64_t f = 0; f < F; ++f)
      for (int64_t gh = 0; gh < GH; ++gh)
        for (int64_t gw = 0; gw < GW; ++gw) {
          const S* tok = pg + ((f * GH + gh) * GW + gw) * D;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
              for (int64_t dx = 0; dx < p; ++dx)
                gx[((f * C + c) * H + gh * p + dy) * W + gw * p + dx] +=
                    tok[c * p * p + dy * p + dx];
        }
  });
}

template <class S>
Var<S> unpatchify(const Var<S>& t, int64_t F, int64_t C, int64_t H, int64_t W,
                  int64_t p) {
  const int64_t GH = H / p, GW = W / p, D = C * p * p;
  NEFIC_CHECK(t.shape().size() == 2 && t.shape()[0] == F * GH * GW &&
                  t.shape()[1] == D,
              ShapeError, "unpatchify: ", shape_str(t.shape()), " -> [", F, ",",
              C, ",", H, ",", W, "]");
  Tensor<S> y({F, C, H, W});
  const S* pt = t.value().data();
  S* py = y.data();
  for (int64_t f = 0; f < F; ++f)
    for (int64_t gh = 0; gh < GH; ++gh)
      for (int64_t gw = 0; gw < GW; ++gw) {
        const S* tok = pt + ((f * GH + gh) * GW + gw) * D;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dy = 0; dy < p; ++dy)
            for (int64_t dx = 0; dx < p; ++dx)
              py[((f * C + c) * H + gh * p + dy) * W + gw * p + dx] =
                  tok[c * p * p + dy * p + dx];
      }
  return make_node<S>(std::move(y), {t}, [t, F, C, H, W, p](NodeT<S>& n) {
    if (!t.requires_grad()) return;
    const int64_t GH = H / p, GW = W / p, D = C * p * p;
    const S* pg = n.grad.data();
    S* gt = t.node()->ensure_grad().data();
    for (int64_t f = 0; f < F; ++f)
      for (int64_t gh = 0; gh < GH; ++gh)
        for (int64_t gw = 0; gw < GW; ++gw) {
          S* tok = gt + ((f * GH + gh) * GW + gw) * D;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
              for (int64_t dx = 0; dx < p; ++dx)
                tok[c * p * p + dy * p + dx] +=
                    pg[((f * C + c) * H + gh * p + dy) * W + gw * p + dx];
        }
  });
}

// ---------------------------------------------------------------------------
// Normalization & softmax
// ---------------------------------------------------------------------------

// Per-row layer norm over the last dim of a 2-d tensor, no affine part.
template <class S>
Var<S> layer_norm(const Var<S>& x, S eps = S(1e-5)) {
  NEFIC_CHECK(x.shape().size() == 2, ShapeError, "layer_norm: need 2-d");
  const int64_t R = x.shape()[0], D = x.shape()[1];
  Tensor<S> y({R, D});
  Tensor<S> rstd({R});
  const S* px = x.value().data();
  S* py = y.data();
  for (int64_t r = 0; r < R; ++r) {
    const S* row = px + r * D;
    S mean = 0;
    for (int64_t d = 0; d < D; ++d) mean += row[d];
    mean /= S(D);
    S var = 0;
    for (int64_t d = 0; d < D; ++d) {
      const S c = row[d] - mean;
      var += c * c;
    }
    var /= S(D);
    const S rs = S(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int64_t d = 0; d < D; ++d) py[r * D + d] = (row[d] - mean) * rs;
  }
  Tensor<S> saved_y = y;
  return make_node<S>(std::move(y), {x},
                      [x, saved_y, rstd, R, D](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const S* pg = n.grad.data();
    const S* py = saved_y.data();
    S* gx = x.node()->ensure_grad().data();
    for (int64_t r = 0; r < R; ++r) {
      const S* g = pg + r * D;
      const S* yr = py + r * D;
      S mg = 0, mgy = 0;
      for (int64_t d = 0; d < D; ++d) {
        mg += g[d];
        mgy += g[d] * yr[d];
      }
      mg /= S(D);
      mgy /= S(D);
      const S rs = rstd[r];
      for (int64_t d = 0; d < D; ++d)
        gx[r * D + d] += rs * (g[d] - mg - yr[d] * mgy);
    }
  });
}

// Row-wise softmax over the last dim of a 2-d tensor.
template <class S>
Var<S> softmax_rows(const Var<S>& x) {
  NEFIC_CHECK(x.shape().size() == 2, ShapeError, "softmax_rows: need 2-d");
  const int64_t R = x.shape()[0], D = x.shape()[1];
  Tensor<S> y({R, D});
  const S* px = x.value().data();
  S* py = y.data();
  for (int64_t r = 0; r < R; ++r) {
    const S* row = px + r * D;
    S mx = row[0];
    for (int64_t d = 1; d < D; ++d) mx = std::max(mx, row[d]);
    S z = 0;
    for (int64_t d = 0; d < D; ++d) {
      const S e = std::exp(row[d] - mx);
      py[r * D + d] = e;
      z += e;
    }
    const S inv = S(1) / z;
    for (int64_t d = 0; d < D; ++d) py[r * D + d] *= inv;
  }
  Tensor<S> saved_y = y;
  return make_node<S>(std::move(y), {x}, [x, saved_y, R, D](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    const S* pg = n.grad.data();
    const S* py = saved_y.data();
    S* gx = x.node()->ensure_grad().data();
    for (int64_t r = 0; r < R; ++r) {
      const S* g = pg + r * D;
      const S* yr = py + r * D;
      S dot = 0;
      for (int64_t d = 0; d < D; ++d) dot += g[d] * yr[d];
      for (int64_t d = 0; d < D; ++d) gx[r * D + d] += yr[d] * (g[d] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Multi-head attention with rotary position encoding over (frame, row, col).
// ---------------------------------------------------------------------------

struct RopeLayout {
  int64_t heads = 4;
  int64_t head_dim = 32;
  int64_t dims_frame = 8;  // head-dim split across the three coordinates
  int64_t dims_row = 12;
  int64_t dims_col = 12;
  double base = 10000.0;

  void validate() const {
    NEFIC_CHECK(dims_frame + dims_row + dims_col == head_dim, ConfigError,
                "rotary dims must cover the head dim: ", dims_frame, "+",
                dims_row, "+", dims_col, " != ", head_dim);
    NEFIC_CHECK(dims_frame % 2 == 0 && dims_row % 2 == 0 && dims_col % 2 == 0,
                ConfigError, "rotary dim groups must be even");
  }
};

namespace detail {

// Rotates (or inversely rotates, dir=-1) features in-place per token/head.
// coords: [T,3] with (frame,row,col); any negative coordinate in a group
// leaves that group unrotated, which is how the learned prompt slots are
// kept position-free.
template <class S>
void rope_apply(S* q, int64_t T, const Tensor<S>& coords,
                const RopeLayout& rl, int dir) {
  const int64_t Dh = rl.head_dim, HD = rl.heads * Dh;
  const int64_t group_dims[3] = {rl.dims_frame, rl.dims_row, rl.dims_col};
  // Per-group inverse frequencies.
  std::vector<std::vector<S>> freqs(3);
  for (int g = 0; g < 3; ++g) {
    freqs[g].resize(group_dims[g] / 2);
    for (int64_t i = 0; i < group_dims[g] / 2; ++i)
      freqs[g][i] =
          S(std::pow(rl.base, -2.0 * double(i) / double(group_dims[g])));
  }
  for (int64_t t = 0; t < T; ++t) {
    const S* ct = coords.data() + t * 3;
    for (int64_t h = 0; h < rl.heads; ++h) {
      S* vec = q + t * HD + h * Dh;
      int64_t off = 0;
      for (int g = 0; g < 3; ++g) {
        const int64_t dg = group_dims[g];
        if (ct[g] >= S(0)) {
          for (int64_t i = 0; i < dg / 2; ++i) {
            const S phi = S(dir) * ct[g] * freqs[g][i];
            const S c = std::cos(phi), s = std::sin(phi);
            S& a = vec[off + 2 * i];
            S& b = vec[off + 2 * i + 1];
            const S na = a * c - b * s;
            const S nb = a * s + b * c;
            a = na;
            b = nb;
          }
        }
        off += dg;
      }
    }
  }
}

}  // namespace detail

// Full bidirectional attention; q,k,v: [T, heads*head_dim]. coords is a
// non-differentiable [T,3] position table.
template <class S>
Var<S> attention_rope(const Var<S>& q, const Var<S>& k, const Var<S>& v,
                      const Tensor<S>& coords, const RopeLayout& rl) {
  rl.validate();
  const int64_t HD = rl.heads * rl.head_dim;
  NEFIC_CHECK(q.shape().size() == 2 && q.shape()[1] == HD &&
                  same_shape(q.value(), k.value()) &&
                  same_shape(q.value(), v.value()),
              ShapeError, "attention: q ", shape_str(q.shape()));
  const int64_t T = q.shape()[0];
  NEFIC_CHECK(coords.shape().size() == 2 && coords.shape()[0] == T &&
                  coords.shape()[1] == 3,
              ShapeError, "attention: coords ", shape_str(coords.shape()));
  const int64_t Dh = rl.head_dim, H = rl.heads;
  const S alpha = S(1) / std::sqrt(S(Dh));

  Tensor<S> qr = q.value().clone();
  Tensor<S> kr = k.value().clone();
  detail::rope_apply(qr.data(), T, coords, rl, +1);
  detail::rope_apply(kr.data(), T, coords, rl, +1);

  Tensor<S> probs({H, T, T});
  Tensor<S> out({T, HD});
  for (int64_t h = 0; h < H; ++h) {
    auto qh = eig::cmap(qr, T, HD).block(0, h * Dh, T, Dh);
    auto kh = eig::cmap(kr, T, HD).block(0, h * Dh, T, Dh);
    Eigen::Map<eig::MatRM<S>> ph(probs.data() + h * T * T, T, T);
    ph.noalias() = qh * kh.transpose() * alpha;
    // row softmax
    for (int64_t r = 0; r < T; ++r) {
      S* row = probs.data() + (h * T + r) * T;
      S mx = row[0];
      for (int64_t c2 = 1; c2 < T; ++c2) mx = std::max(mx, row[c2]);
      S z = 0;
      for (int64_t c2 = 0; c2 < T; ++c2) {
        row[c2] = std::exp(row[c2] - mx);
        z += row[c2];
      }
      const S inv = S(1) / z;
      for (int64_t c2 = 0; c2 < T; ++c2) row[c2] *= inv;
    }
    eig::map(out, T, HD).block(0, h * Dh, T, Dh).noalias() =
        ph * eig::cmap(v.value(), T, HD).block(0, h * Dh, T, Dh);
  }

  return make_node<S>(
      std::move(out), {q, k, v},
      [q, k, v, qr, kr, probs, coords, rl, T, H, Dh, HD, alpha](NodeT<S>& n) {
        Tensor<S> dqr = Tensor<S>::zeros({T, HD});
        Tensor<S> dkr = Tensor<S>::zeros({T, HD});
        const bool need_qk = q.requires_grad() || k.requires_grad();
        for (int64_t h = 0; h < H; ++h) {
          auto go = eig::cmap(n.grad, T, HD).block(0, h * Dh, T, Dh);
          Eigen::Map<const eig::MatRM<S>> ph(probs.data() + h * T * T, T, T);
          if (v.requires_grad()) {
            eig::map(v.node()->ensure_grad(), T, HD)
                .block(0, h * Dh, T, Dh)
                .noalias() += ph.transpose() * go;
          }
          if (!need_qk) continue;
          eig::MatRM<S> dp(T, T);
          dp.noalias() =
              go * eig::cmap(v.value(), T, HD).block(0, h * Dh, T, Dh).transpose();
          // softmax backward: ds = p .* (dp - rowsum(dp .* p))
          eig::MatRM<S> ds(T, T);
          for (int64_t r = 0; r < T; ++r) {
            S dot = 0;
            for (int64_t c2 = 0; c2 < T; ++c2) dot += dp(r, c2) * ph(r, c2);
            for (int64_t c2 = 0; c2 < T; ++c2)
              ds(r, c2) = ph(r, c2) * (dp(r, c2) - dot);
          }
          eig::map(dqr, T, HD).block(0, h * Dh, T, Dh).noalias() =
              ds * eig::cmap(kr, T, HD).block(0, h * Dh, T, Dh) * alpha;
          eig::map(dkr, T, HD).block(0, h * Dh, T, Dh).noalias() =
              ds.transpose() * eig::cmap(qr, T, HD).block(0, h * Dh, T, Dh) *
              alpha;
        }
        if (q.requires_grad()) {
          detail::rope_apply(dqr.data(), T, coords, rl, -1);
          q.node()->ensure_grad().add_(dqr);
        }
        if (k.requires_grad()) {
          detail::rope_apply(dkr.data(), T, coords, rl, -1);
          k.node()->ensure_grad().add_(dkr);
        }
      });
}

}  // namespace nefic

#endif  // NEFIC_OPS_HPP_

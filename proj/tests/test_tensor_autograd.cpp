// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "nefic/nn.hpp"
#include "nefic/ops.hpp"
#include "test_util.hpp"

using namespace nefic;
using nefic_test::check_scalar_grad;
using nefic_test::expect_tensor_near;
using V = Var<double>;
using T = Tensor<double>;

TEST(Tensor, ReshapeSharesStorageCloneDoesNot) {
  Rng rng(7);
  T a = T::randn({2, 6}, rng);
  T b = a.reshape({3, 4});
  b[0] = 42.0;
  EXPECT_EQ(a[0], 42.0);
  T c = a.clone();
  c[1] = -1.0;
  EXPECT_NE(a[1], -1.0);
  EXPECT_THROW(a.reshape({5, 5}), ShapeError);
}

TEST(Tensor, AccessorsAndStats) {
  T a = T::from_values({2, 2}, {1.0, -3.0, 2.0, 0.5});
  EXPECT_EQ(a.at(1, 0), 2.0);
  EXPECT_EQ(a.abs_max(), 3.0);
  EXPECT_NEAR(a.sum_double(), 0.5, 1e-12);
  EXPECT_TRUE(a.all_finite());
  a[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(a.all_finite());
}

TEST(Rng, DeterministicAndForkable) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(123);
  Rng child1 = c.fork(1);
  Rng c2(123);
  Rng child1b = c2.fork(1);
  Rng child2 = c2.fork(2);
  EXPECT_EQ(child1.next_u64(), child1b.next_u64());
  EXPECT_NE(child1.next_u64(), child2.next_u64());
  // normal() has roughly the right first two moments
  Rng d(5);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = d.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Autograd, ElementwiseGradientsMatchFiniteDifferences) {
  Rng rng(11);
  T a = T::randn({3, 4}, rng);
  T b = T::rand_uniform({3, 4}, rng, 0.5, 2.0);  // positive: log/divide-safe

  check_scalar_grad({&a, &b}, [](const std::vector<V>& v) {
    return sum_all(mul(add(v[0], v[1]), sub(v[0], v[1])));
  });
  check_scalar_grad({&a, &b}, [](const std::vector<V>& v) {
    return mean_all(divide(v[0], v[1]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(mul_scalar(add_scalar(v[0], 0.7), -1.3));
  });
  check_scalar_grad({&b}, [](const std::vector<V>& v) {
    return sum_all(log_op(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(exp_op(mul_scalar(v[0], 0.5)));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(sigmoid(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(silu(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(tanh_op(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(softplus(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(erf_op(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(square(v[0]));
  });
  check_scalar_grad({&a, &b}, [](const std::vector<V>& v) {
    return mse(v[0], v[1]);
  });
}

TEST(Autograd, KinkedOpsAwayFromKinks) {
  // Values kept > eps away from the kink so the FD probe stays one-sided.
  T a = T::from_values({6}, {-1.5, -0.3, 0.2, 0.9, 2.0, -0.01});
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(relu(v[0]));
  });
  check_scalar_grad({&a}, [](const std::vector<V>& v) {
    return sum_all(leaky_relu(v[0], 0.2));
  });
  T c = T::from_values({4}, {0.05, 0.2, -0.4, 1.0});
  check_scalar_grad({&c}, [](const std::vector<V>& v) {
    return sum_all(clamp_min(v[0], 0.11));
  });
}

TEST(Autograd, RoundTiesToEvenWithStraightThroughGrad) {
  T x = T::from_values({6}, {2.5, 3.5, -2.5, -3.5, 1.4999, -1.5001});
  V vx = V::leaf(x, true);
  V y = round_ste(vx);
  EXPECT_EQ(y.value()[0], 2.0);
  EXPECT_EQ(y.value()[1], 4.0);
  EXPECT_EQ(y.value()[2], -2.0);
  EXPECT_EQ(y.value()[3], -4.0);
  EXPECT_EQ(y.value()[4], 1.0);
  EXPECT_EQ(y.value()[5], -2.0);
  backward(sum_all(y));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(vx.grad()[i], 1.0);
}

TEST(Autograd, DiamondGraphAccumulates) {
  T x = T::from_values({3}, {0.5, -1.0, 2.0});
  V vx = V::leaf(x, true);
  V y = add(mul(vx, vx), vx);  // x^2 + x -> dy/dx = 2x + 1
  backward(sum_all(y));
  for (int64_t i = 0; i < 3; ++i)
    EXPECT_NEAR(vx.grad()[i], 2.0 * x[i] + 1.0, 1e-12);
}

TEST(Autograd, FrozenLeavesGetNoGradient) {
  Rng rng(3);
  T a = T::randn({2, 2}, rng), b = T::randn({2, 2}, rng);
  V va = V::leaf(a, true), vb = V::leaf(b, false);
  V y = sum_all(mul(va, vb));
  EXPECT_TRUE(y.requires_grad());
  backward(y);
  EXPECT_TRUE(va.has_grad());
  EXPECT_FALSE(vb.has_grad());

  // A graph with no trainable leaves stays grad-free end to end.
  V z = sum_all(mul(vb, vb));
  EXPECT_FALSE(z.requires_grad());
  backward(z);
  EXPECT_FALSE(vb.has_grad());

  // detach() blocks the flow even from trainable leaves.
  V w = sum_all(mul(detach(va), va));
  va.clear_grad();
  backward(w);
  expect_tensor_near(va.grad(), a, 1e-12);  // only the live branch contributes
}

TEST(Ops, MatmulAgainstNaiveAndGrad) {
  Rng rng(21);
  T a = T::randn({3, 5}, rng), b = T::randn({5, 4}, rng);
  V y = matmul(V::leaf(a), V::leaf(b));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < 5; ++k) acc += a.at(i, k) * b.at(k, j);
      ASSERT_NEAR(y.value().at(i, j), acc, 1e-12);
    }
  check_scalar_grad({&a, &b}, [](const std::vector<V>& v) {
    return sum_all(square(matmul(v[0], v[1])));
  });
}

TEST(Ops, LinearShapeAndGrad) {
  Rng rng(22);
  T x = T::randn({2, 3, 5}, rng), w = T::randn({4, 5}, rng), b = T::randn({4}, rng);
  V y = linear(V::leaf(x), V::leaf(w), V::leaf(b));
  ASSERT_EQ(shape_str(y.shape()), "[2x3x4]");
  check_scalar_grad({&x, &w, &b}, [](const std::vector<V>& v) {
    return sum_all(silu(linear(v[0], v[1], v[2])));
  });
  EXPECT_THROW(linear(V::leaf(x), V::leaf(T::zeros({4, 6}))), ShapeError);
}

namespace {
// Direct convolution reference.
T naive_conv2d(const T& x, const T& w, const T& b, int64_t stride, int64_t pad) {
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                W = x.shape()[3];
  const int64_t OC = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  T y({N, OC, OH, OW});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t oc = 0; oc < OC; ++oc)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          double acc = b.defined() ? b[oc] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t ih = oh * stride - pad + i;
                const int64_t iw = ow * stride - pad + j;
                if (ih >= 0 && ih < H && iw >= 0 && iw < W)
                  acc += x[((n * C + c) * H + ih) * W + iw] *
                         w[((oc * C + c) * kh + i) * kw + j];
              }
          y[((n * OC + oc) * OH + oh) * OW + ow] = acc;
        }
  return y;
}
}  // namespace

TEST(Ops, Conv2dMatchesDirectConvolution) {
  Rng rng(23);
  for (auto [stride, pad, k] : {std::tuple<int64_t, int64_t, int64_t>{1, 1, 3},
                                {2, 1, 3},
                                {1, 0, 1},
                                {2, 2, 5}}) {
    T x = T::randn({2, 3, 9, 8}, rng);
    T w = T::randn({4, 3, k, k}, rng, 0.3);
    T b = T::randn({4}, rng);
    V y = conv2d(V::leaf(x), V::leaf(w), V::leaf(b), stride, pad);
    T ref = naive_conv2d(x, w, b, stride, pad);
    expect_tensor_near(y.value(), ref, 1e-10);
  }
}

TEST(Ops, Conv2dGradients) {
  Rng rng(24);
  T x = T::randn({2, 2, 6, 5}, rng);
  T w = T::randn({3, 2, 3, 3}, rng, 0.4);
  T b = T::randn({3}, rng);
  check_scalar_grad(
      {&x, &w, &b},
      [](const std::vector<V>& v) {
        return sum_all(square(conv2d(v[0], v[1], v[2], 2, 1)));
      },
      1e-5);
}

TEST(Ops, UpsampleNearestForwardAndGrad) {
  T x = T::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  V y = upsample_nearest2x(V::leaf(x));
  T expect = T::from_values({1, 1, 4, 4},
                            {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  expect_tensor_near(y.value(), expect, 0.0);
  Rng rng(25);
  T x2 = T::randn({2, 3, 3, 4}, rng);
  check_scalar_grad({&x2}, [](const std::vector<V>& v) {
    return sum_all(square(upsample_nearest2x(v[0])));
  });
}

TEST(Ops, PatchifyRoundTripAndLayout) {
  Rng rng(26);
  T z = T::randn({2, 3, 4, 6}, rng);
  V t = patchify(V::leaf(z), 2);
  ASSERT_EQ(shape_str(t.shape()), "[12x12]");  // 2 frames * 2x3 patches, 3*4 dims
  // token (f=1, gh=0, gw=2), channel 2, dy=1, dx=0 -> z[1,2,1,4]
  const int64_t tok = (1 * 2 + 0) * 3 + 2;
  EXPECT_EQ(t.value().at(tok, 2 * 4 + 1 * 2 + 0), z[((1 * 3 + 2) * 4 + 1) * 6 + 4]);
  V back = unpatchify(t, 2, 3, 4, 6, 2);
  expect_tensor_near(back.value(), z, 0.0);
  check_scalar_grad({&z}, [](const std::vector<V>& v) {
    return sum_all(square(unpatchify(patchify(v[0], 2), 2, 3, 4, 6, 2)));
  });
}

TEST(Ops, ConcatSliceGradients) {
  Rng rng(27);
  T a = T::randn({2, 3, 2, 2}, rng), b = T::randn({2, 2, 2, 2}, rng);
  V y = concat_channels(V::leaf(a), V::leaf(b));
  ASSERT_EQ(shape_str(y.shape()), "[2x5x2x2]");
  check_scalar_grad({&a, &b}, [](const std::vector<V>& v) {
    V cat = concat_channels(v[0], v[1]);
    return sum_all(square(slice_channels(cat, 1, 4)));
  });
  T p = T::randn({4, 3}, rng), q = T::randn({2, 3}, rng);
  check_scalar_grad({&p, &q}, [](const std::vector<V>& v) {
    V cat = concat_rows(v[0], v[1]);
    return sum_all(square(slice_rows(cat, 1, 5)));
  });
  T r = T::randn({3, 6}, rng);
  check_scalar_grad({&r}, [](const std::vector<V>& v) {
    return sum_all(square(slice_cols(v[0], 2, 5)));
  });
}

TEST(Ops, RowwiseOpsGradients) {
  Rng rng(28);
  T x = T::randn({4, 3}, rng), s = T::randn({3}, rng), b = T::randn({3}, rng);
  check_scalar_grad({&x, &s, &b}, [](const std::vector<V>& v) {
    return sum_all(square(rowwise_add(rowwise_mul(v[0], v[1]), v[2])));
  });
}

TEST(Ops, LayerNormNormalizesAndGrad) {
  Rng rng(29);
  T x = T::randn({3, 8}, rng, 2.5);
  V y = layer_norm(V::leaf(x));
  for (int64_t r = 0; r < 3; ++r) {
    double m = 0, v2 = 0;
    for (int64_t d = 0; d < 8; ++d) m += y.value().at(r, d);
    m /= 8;
    for (int64_t d = 0; d < 8; ++d) {
      const double c = y.value().at(r, d) - m;
      v2 += c * c;
    }
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v2 / 8, 1.0, 1e-4);
  }
  check_scalar_grad(
      {&x},
      [](const std::vector<V>& v) {
        return sum_all(square(layer_norm(v[0])));
      },
      1e-5);
}

TEST(Ops, SoftmaxRowsSumToOneAndGrad) {
  Rng rng(30);
  T x = T::randn({4, 5}, rng);
  V y = softmax_rows(V::leaf(x));
  for (int64_t r = 0; r < 4; ++r) {
    double s = 0;
    for (int64_t d = 0; d < 5; ++d) s += y.value().at(r, d);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  check_scalar_grad({&x}, [](const std::vector<V>& v) {
    return sum_all(square(softmax_rows(v[0])));
  });
}

TEST(Ops, AttentionWithoutRotationEqualsPlainAttention) {
  Rng rng(31);
  const int64_t Tn = 5;
  RopeLayout rl;
  rl.heads = 2;
  rl.head_dim = 4;
  rl.dims_frame = 2;
  rl.dims_row = 0;
  rl.dims_col = 2;
  T q = T::randn({Tn, 8}, rng), k = T::randn({Tn, 8}, rng), v = T::randn({Tn, 8}, rng);
  T coords = T::full({Tn, 3}, -1.0);  // sentinel: no rotation anywhere
  V out = attention_rope(V::leaf(q), V::leaf(k), V::leaf(v), coords, rl);
  // reference: per-head softmax(q k^T / sqrt(d)) v
  for (int64_t h = 0; h < 2; ++h) {
    for (int64_t i = 0; i < Tn; ++i) {
      std::vector<double> sc(Tn);
      double mx = -1e30;
      for (int64_t j = 0; j < Tn; ++j) {
        double acc = 0;
        for (int64_t d = 0; d < 4; ++d) acc += q.at(i, h * 4 + d) * k.at(j, h * 4 + d);
        sc[j] = acc / 2.0;
        mx = std::max(mx, sc[j]);
      }
      double z = 0;
      for (int64_t j = 0; j < Tn; ++j) {
        sc[j] = std::exp(sc[j] - mx);
        z += sc[j];
      }
      for (int64_t d = 0; d < 4; ++d) {
        double acc = 0;
        for (int64_t j = 0; j < Tn; ++j) acc += sc[j] / z * v.at(j, h * 4 + d);
        ASSERT_NEAR(out.value().at(i, h * 4 + d), acc, 1e-10);
      }
    }
  }
}

TEST(Ops, AttentionGradients) {
  Rng rng(32);
  const int64_t Tn = 6;
  RopeLayout rl;
  rl.heads = 2;
  rl.head_dim = 6;
  rl.dims_frame = 2;
  rl.dims_row = 2;
  rl.dims_col = 2;
  T q = T::randn({Tn, 12}, rng), k = T::randn({Tn, 12}, rng),
    v = T::randn({Tn, 12}, rng);
  T coords({Tn, 3});
  for (int64_t t = 0; t < Tn; ++t) {
    coords[t * 3 + 0] = double(t % 2);
    coords[t * 3 + 1] = double(t / 2);
    coords[t * 3 + 2] = double(t % 3);
  }
  coords[0] = coords[1] = coords[2] = -1.0;  // one sentinel token
  check_scalar_grad(
      {&q, &k, &v},
      [&](const std::vector<V>& vs) {
        return sum_all(square(attention_rope(vs[0], vs[1], vs[2], coords, rl)));
      },
      1e-5);
}

TEST(Ops, ReshapeGrad) {
  Rng rng(33);
  T x = T::randn({2, 6}, rng);
  check_scalar_grad({&x}, [](const std::vector<V>& v) {
    return sum_all(square(reshape(v[0], {3, 4})));
  });
}

TEST(Nn, AdamWSingleStepMatchesHandComputation) {
  AdamW<double>::Options opt;
  opt.lr = 1e-4;
  opt.weight_decay = 0.01;
  ParamStore<double> ps;
  V w = V::leaf(T::from_values({1}, {1.0}), true);
  ps.add("w", &w);
  AdamW<double> adam(opt);
  adam.attach(ps);
  backward(sum_all(w));  // grad = 1
  const double gnorm = adam.step();
  EXPECT_NEAR(gnorm, 1.0, 1e-12);
  // m_hat = 1, v_hat = 1 -> update = 1/(1+eps) + wd*w
  const double expect = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8) + 0.01 * 1.0);
  EXPECT_NEAR(w.value()[0], expect, 1e-12);
}

TEST(Nn, ParamStoreFreezeAndChecksum) {
  Rng rng(40);
  ParamStore<double> ps;
  V a = V::leaf(T::randn({3}, rng), true);
  V b = V::leaf(T::randn({3}, rng), true);
  ps.add("enc.w", &a);
  ps.add("dit.lora_down", &b);
  ps.set_trainable_all(false);
  EXPECT_EQ(ps.numel_trainable(), 0);
  EXPECT_EQ(ps.set_trainable_matching(".lora_", true), 1);
  EXPECT_EQ(ps.numel_trainable(), 3);
  const uint64_t before = ps.checksum_matching("enc.");
  a.value()[0] += 1.0;
  EXPECT_NE(ps.checksum_matching("enc."), before);
  a.value()[0] -= 1.0;
  EXPECT_EQ(ps.checksum_matching("enc."), before);
  EXPECT_THROW(ps.add("enc.w", &a), ConfigError);
}

// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "nefic/dit.hpp"
#include "test_util.hpp"

namespace nefic {
namespace {

template <class S>
Var<S> rand_latent(Rng& rng) {
  return constant(Tensor<S>::randn({1, 8, 8, 8}, rng));
}

TEST(TimestepEmbedding, ZeroTimestep) {
  Tensor<double> e = timestep_embedding<double>(0, 8);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(e[i], 0.0);
  for (int i = 4; i < 8; ++i) EXPECT_DOUBLE_EQ(e[i], 1.0);
}

TEST(TimestepEmbedding, DistinctTimestepsDiffer) {
  Tensor<double> a = timestep_embedding<double>(500, 128);
  Tensor<double> b = timestep_embedding<double>(501, 128);
  double diff = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-4);
}

TEST(TokenCoords, LayoutFor8x8Latent) {
  // 8x8 latent, patch 2 -> 4x4 grid per frame -> 16+16+16 = 48 tokens.
  Tensor<double> c = token_coords<double>(4, 4);
  ASSERT_EQ(shape_str(c.shape()), "[48x3]");
  for (int64_t i = 0; i < 16; ++i)
    for (int64_t a = 0; a < 3; ++a) ASSERT_EQ(c.at(i, a), -1.0);
  // Anchor token at grid (1,2) and target token at the same grid position
  // differ only in the frame coordinate.
  const int64_t anchor = 16 + 1 * 4 + 2, target = 16 + 16 + 1 * 4 + 2;
  EXPECT_EQ(c.at(anchor, 0), 0.0);
  EXPECT_EQ(c.at(target, 0), 1.0);
  EXPECT_EQ(c.at(anchor, 1), c.at(target, 1));
  EXPECT_EQ(c.at(anchor, 2), c.at(target, 2));
}

TEST(DiT, ForwardShapeMatchesTarget) {
  Rng rng(1);
  DiT<float> dit(rng);
  Var<float> za = rand_latent<float>(rng);
  Var<float> zt = rand_latent<float>(rng);
  Var<float> v = dit.forward(za, zt, 500);
  EXPECT_EQ(shape_str(v.shape()), "[1x8x8x8]");
  EXPECT_TRUE(v.value().all_finite());
}

TEST(DiT, RejectsMismatchedLatents) {
  Rng rng(2);
  DiT<float> dit(rng);
  Var<float> za = rand_latent<float>(rng);
  Var<float> zt = constant(Tensor<float>::zeros({1, 8, 4, 4}));
  EXPECT_THROW(dit.forward(za, zt, 100), ShapeError);
}

TEST(DiT, FreshAdaptersAreExactlyInert) {
  // `up` starts at zero, so whatever sits in `down` the adapter delta is a
  // hard zero and the output matches the base map bit for bit.
  Rng rng(3);
  DiT<double> dit(rng);
  Var<double> za = rand_latent<double>(rng);
  Var<double> zt = rand_latent<double>(rng);
  Tensor<double> base_out = dit.forward(za, zt, 250).value().clone();
  for (auto& blk : dit.blocks()) {
    blk.wq.down.value().fill(0.333);
    blk.wk.down.value().fill(-1.25);
    blk.wv.down.value().fill(7.0);
    blk.wo.down.value().fill(0.001);
  }
  Tensor<double> out = dit.forward(za, zt, 250).value();
  for (int64_t i = 0; i < out.numel(); ++i) ASSERT_EQ(out[i], base_out[i]);
}

TEST(DiT, LoraMergeMatchesAdapterForward) {
  Rng rng(4);
  DiT<double> dit(rng);
  // Give the adapters real content.
  Rng arng(5);
  for (auto& blk : dit.blocks()) {
    blk.wq.up.value() = Tensor<double>::randn(blk.wq.up.shape(), arng, 0.05);
    blk.wk.up.value() = Tensor<double>::randn(blk.wk.up.shape(), arng, 0.05);
    blk.wv.up.value() = Tensor<double>::randn(blk.wv.up.shape(), arng, 0.05);
    blk.wo.up.value() = Tensor<double>::randn(blk.wo.up.shape(), arng, 0.05);
  }
  Var<double> za = rand_latent<double>(rng);
  Var<double> zt = rand_latent<double>(rng);
  Tensor<double> with_adapters = dit.forward(za, zt, 777).value().clone();
  dit.merge_lora();
  Tensor<double> merged = dit.forward(za, zt, 777).value();
  for (int64_t i = 0; i < merged.numel(); ++i) {
    const double ref = std::max(1e-3, std::abs(with_adapters[i]));
    ASSERT_NEAR(merged[i], with_adapters[i], 1e-5 * ref);
  }
}

TEST(LoraLinear, MergedWeightHandOracle) {
  // base 2x2, rank 1: W' = W + s * (down . up)^T in [out,in] storage.
  Tensor<double> base = Tensor<double>::from_values({2, 2}, {1, 2, 3, 4});
  Tensor<double> down = Tensor<double>::from_values({2, 1}, {0.5, -1.0});
  Tensor<double> up = Tensor<double>::from_values({1, 2}, {2.0, 3.0});
  Tensor<double> w =
      LoraLinear<double>::lora_merged_weight(base, down, up, 2.0);
  // delta_row = down*up = [[1, 1.5], [-2, -3]]; W' = W + 2*delta_row^T.
  EXPECT_DOUBLE_EQ(w.at(0, 0), 1.0 + 2.0 * 1.0);
  EXPECT_DOUBLE_EQ(w.at(0, 1), 2.0 + 2.0 * -2.0);
  EXPECT_DOUBLE_EQ(w.at(1, 0), 3.0 + 2.0 * 1.5);
  EXPECT_DOUBLE_EQ(w.at(1, 1), 4.0 + 2.0 * -3.0);
}

TEST(LoraLinear, RankMismatchThrows) {
  Tensor<double> base = Tensor<double>::from_values({2, 2}, {1, 2, 3, 4});
  Tensor<double> down = Tensor<double>::from_values({2, 1}, {0.5, -1.0});
  Tensor<double> up = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  EXPECT_THROW(LoraLinear<double>::lora_merged_weight(base, down, up, 1.0),
               ConfigError);
}

TEST(Rope, JointSpatialShiftLeavesLogitsUnchanged) {
  // Rotate random q/k under original and spatially shifted coords; all
  // pairwise dot products (the attention logits) must agree.
  RopeLayout rl;
  Rng rng(6);
  const int64_t T = 12, HD = rl.heads * rl.head_dim;
  Tensor<double> q = Tensor<double>::randn({T, HD}, rng);
  Tensor<double> k = Tensor<double>::randn({T, HD}, rng);
  Tensor<double> coords({T, 3});
  for (int64_t i = 0; i < T; ++i) {
    coords.at(i, 0) = double(i % 2);
    coords.at(i, 1) = double(i / 4);
    coords.at(i, 2) = double(i % 4);
  }
  Tensor<double> shifted = coords.clone();
  for (int64_t i = 0; i < T; ++i) {
    shifted.at(i, 1) += 5.0;
    shifted.at(i, 2) += 3.0;
  }
  auto logits = [&](const Tensor<double>& co) {
    Tensor<double> qr = q.clone(), kr = k.clone();
    detail::rope_apply(qr.data(), T, co, rl, +1);
    detail::rope_apply(kr.data(), T, co, rl, +1);
    Tensor<double> lg({rl.heads, T, T});
    for (int64_t h = 0; h < rl.heads; ++h)
      for (int64_t i = 0; i < T; ++i)
        for (int64_t j = 0; j < T; ++j) {
          double acc = 0;
          for (int64_t d = 0; d < rl.head_dim; ++d)
            acc += qr.at(i, h * rl.head_dim + d) * kr.at(j, h * rl.head_dim + d);
          lg.at(h, i, j) = acc;
        }
    return lg;
  };
  Tensor<double> a = logits(coords), b = logits(shifted);
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], 1e-6);
}

TEST(Rope, FrameOffsetIsRelative) {
  // Equal-(row,col) anchor/target pairs see the same frame-axis offset
  // wherever they sit on the grid.
  RopeLayout rl;
  Rng rng(7);
  const int64_t HD = rl.heads * rl.head_dim;
  Tensor<double> q = Tensor<double>::randn({1, HD}, rng);
  Tensor<double> k = Tensor<double>::randn({1, HD}, rng);
  auto pair_logit = [&](double row, double col) {
    Tensor<double> qr = q.clone(), kr = k.clone();
    Tensor<double> cq({1, 3}), ck({1, 3});
    cq.at(0, 0) = 0;  // anchor frame
    ck.at(0, 0) = 1;  // target frame
    cq.at(0, 1) = ck.at(0, 1) = row;
    cq.at(0, 2) = ck.at(0, 2) = col;
    detail::rope_apply(qr.data(), 1, cq, rl, +1);
    detail::rope_apply(kr.data(), 1, ck, rl, +1);
    double acc = 0;
    for (int64_t d = 0; d < HD; ++d) acc += qr[d] * kr[d];
    return acc;
  };
  EXPECT_NEAR(pair_logit(0, 0), pair_logit(3, 1), 1e-9);
  EXPECT_NEAR(pair_logit(2, 2), pair_logit(7, 5), 1e-9);
}

TEST(Rope, AttentionOutputInvariantToJointSpatialShift) {
  // With every token carrying a position, attention outputs depend only on
  // coordinate differences, so a joint (row, col) shift changes nothing.
  // (Position-free sentinel tokens are deliberately outside this property:
  // they are never rotated, so their logits against rotated tokens follow
  // the absolute rotation of the partner token.)
  RopeLayout rl;
  Rng rng(8);
  const int64_t T = 20, HD = rl.heads * rl.head_dim;
  Var<double> q = constant(Tensor<double>::randn({T, HD}, rng));
  Var<double> k = constant(Tensor<double>::randn({T, HD}, rng));
  Var<double> v = constant(Tensor<double>::randn({T, HD}, rng));
  Tensor<double> coords({T, 3});
  for (int64_t i = 0; i < T; ++i) {
    coords.at(i, 0) = double(i % 2);
    coords.at(i, 1) = double((i / 2) % 5);
    coords.at(i, 2) = double(i % 5);
  }
  Tensor<double> shifted = coords.clone();
  for (int64_t i = 0; i < T; ++i) {
    shifted.at(i, 1) += 9.0;
    shifted.at(i, 2) += 4.0;
  }
  Tensor<double> a = attention_rope(q, k, v, coords, rl).value().clone();
  Tensor<double> b = attention_rope(q, k, v, shifted, rl).value();
  for (int64_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], 1e-6);
}

TEST(DiT, AnchorSegmentPermutationLeavesOutputUnchanged) {
  Rng rng(9);
  DiT<double> dit(rng);
  Var<double> za = rand_latent<double>(rng);
  Var<double> zt = rand_latent<double>(rng);
  Var<double> prompt = dit.prompt();
  Var<double> anchor = dit.embed_frame(za);
  Var<double> target = dit.embed_frame(zt);
  Tensor<double> coords = token_coords<double>(4, 4);

  // Swap the two halves of the anchor segment together with their coords.
  Var<double> a_lo = slice_rows(anchor, 0, 8), a_hi = slice_rows(anchor, 8, 16);
  Var<double> seq1 = concat_rows(prompt, concat_rows(anchor, target));
  Var<double> seq2 = concat_rows(
      prompt, concat_rows(concat_rows(a_hi, a_lo), target));
  Tensor<double> coords2 = coords.clone();
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t a = 0; a < 3; ++a) {
      coords2.at(16 + i, a) = coords.at(16 + 8 + i, a);
      coords2.at(16 + 8 + i, a) = coords.at(16 + i, a);
    }
  Tensor<double> o1 = dit.forward_from(seq1, coords, 100, 4, 4).value().clone();
  Tensor<double> o2 = dit.forward_from(seq2, coords2, 100, 4, 4).value();
  for (int64_t i = 0; i < o1.numel(); ++i) ASSERT_NEAR(o1[i], o2[i], 1e-9);
}

TEST(DiT, ZeroedAnchorChangesOutput) {
  Rng rng(10);
  DiT<float> dit(rng);
  Var<float> za = rand_latent<float>(rng);
  Var<float> zt = rand_latent<float>(rng);
  Var<float> zz = constant(Tensor<float>::zeros({1, 8, 8, 8}));
  Tensor<float> with_anchor = dit.forward(za, zt, 400).value().clone();
  Tensor<float> without = dit.forward(zz, zt, 400).value();
  double diff = 0;
  for (int64_t i = 0; i < with_anchor.numel(); ++i)
    diff = std::max(diff, std::abs(double(with_anchor[i] - without[i])));
  EXPECT_GT(diff, 0.0);
}

TEST(DiT, ForwardCounterCountsEveryEvaluation) {
  Rng rng(11);
  DiT<float> dit(rng);
  Var<float> za = rand_latent<float>(rng);
  Var<float> zt = rand_latent<float>(rng);
  dit.reset_forward_count();
  EXPECT_EQ(dit.forward_count(), 0);
  for (int i = 0; i < 3; ++i) dit.forward(za, zt, i * 100);
  EXPECT_EQ(dit.forward_count(), 3);
}

TEST(DiT, GradientsReachOnlyAdaptersPromptAndTokenProjWhenBaseFrozen) {
  Rng rng(12);
  DiT<double> dit(rng);
  ParamStore<double> ps;
  dit.register_params(ps);
  ps.set_trainable_all(false);
  ps.set_trainable_matching("lora", true);
  ps.set_trainable_matching("dit.prompt", true);
  ps.set_trainable_matching("dit.token_proj", true);
  // Give adapters content so their gradient is not trivially zero.
  for (auto& blk : dit.blocks())
    blk.wq.up.value() = Tensor<double>::full(blk.wq.up.shape(), 0.01);
  Var<double> za = rand_latent<double>(rng);
  Var<double> zt = rand_latent<double>(rng);
  Var<double> loss = mean_all(square(dit.forward(za, zt, 600)));
  backward(loss);
  for (const auto& e : ps.entries()) {
    const bool adapters = e.name.find("lora") != std::string::npos ||
                          e.name.find("dit.prompt") != std::string::npos ||
                          e.name.find("dit.token_proj") != std::string::npos;
    if (adapters) {
      EXPECT_TRUE(e.var->has_grad()) << e.name;
    } else {
      EXPECT_FALSE(e.var->has_grad()) << e.name;
    }
  }
}

TEST(BypassRefiner, MapsTapToLatentGrid) {
  Rng rng(13);
  BypassRefiner<float> refiner(rng);
  Var<float> h = constant(Tensor<float>::randn({1, 96, 8, 8}, rng));
  Var<float> z1 = refiner.forward(h);
  EXPECT_EQ(shape_str(z1.shape()), "[1x8x8x8]");
  Tensor<float> z2 = refiner.forward(h).value();
  for (int64_t i = 0; i < z2.numel(); ++i) ASSERT_EQ(z1.value()[i], z2[i]);
  EXPECT_THROW(refiner.forward(constant(Tensor<float>::zeros({1, 64, 8, 8}))),
               ShapeError);
}

TEST(BypassRefiner, CarriesNoAdapterParameters) {
  Rng rng(14);
  BypassRefiner<float> refiner(rng);
  ParamStore<float> ps;
  refiner.register_params(ps);
  for (const auto& e : ps.entries())
    EXPECT_EQ(e.name.find("lora"), std::string::npos) << e.name;
  EXPECT_NE(ps.find("refiner.proj_in.w"), nullptr);
  EXPECT_NE(ps.find("refiner.proj_out.b"), nullptr);
}

}  // namespace
}  // namespace nefic

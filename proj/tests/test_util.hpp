// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_TESTS_TEST_UTIL_HPP_
#define NEFIC_TESTS_TEST_UTIL_HPP_

#include <gtest/gtest.h>

#include <functional>
#include <vector>

#include "nefic/autograd.hpp"

namespace nefic_test {

using nefic::Tensor;
using nefic::Var;

inline void expect_tensor_near(const Tensor<double>& a, const Tensor<double>& b,
                               double tol) {
  ASSERT_TRUE(nefic::same_shape(a, b))
      << nefic::shape_str(a.shape()) << " vs " << nefic::shape_str(b.shape());
  for (int64_t i = 0; i < a.numel(); ++i)
    ASSERT_NEAR(a[i], b[i], tol * (1.0 + std::abs(b[i]))) << "at flat index " << i;
}

// Central-difference check of d(scalar build(xs))/d(xs[k]) for every k.
// `build` must construct the graph purely from the passed leaves.
using BuildFn =
    std::function<Var<double>(const std::vector<Var<double>>&)>;

inline void check_scalar_grad(std::vector<Tensor<double>*> xs, const BuildFn& build,
                              double tol = 1e-6, double eps = 1e-5) {
  std::vector<Var<double>> leaves;
  leaves.reserve(xs.size());
  for (auto* t : xs) leaves.push_back(Var<double>::leaf(*t, true));
  Var<double> y = build(leaves);
  ASSERT_EQ(y.numel(), 1);
  nefic::backward(y);

  auto eval = [&]() {
    std::vector<Var<double>> frozen;
    frozen.reserve(xs.size());
    for (auto* t : xs) frozen.push_back(Var<double>::leaf(*t, false));
    return build(frozen).item();
  };

  for (size_t k = 0; k < xs.size(); ++k) {
    Tensor<double>& x = *xs[k];
    Tensor<double> fd(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      const double v = x[i];
      x[i] = v + eps;
      const double fp = eval();
      x[i] = v - eps;
      const double fm = eval();
      x[i] = v;
      fd[i] = (fp - fm) / (2.0 * eps);
    }
    ASSERT_TRUE(leaves[k].has_grad()) << "input " << k << " got no gradient";
    expect_tensor_near(leaves[k].grad(), fd, tol);
  }
}

}  // namespace nefic_test

#endif  // NEFIC_TESTS_TEST_UTIL_HPP_

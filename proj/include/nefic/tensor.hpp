// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_TENSOR_HPP_
#define NEFIC_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <vector>

#include "nefic/common.hpp"
#include "nefic/rng.hpp"

namespace nefic {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. The buffer is shared so reshapes are free; tensors
// are treated as immutable once they enter the autograd graph.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        store_(std::make_shared<std::vector<S>>(shape_numel(shape_), S(0))) {}
  Tensor(Shape shape, std::shared_ptr<std::vector<S>> store)
      : shape_(std::move(shape)), store_(std::move(store)) {
    NEFIC_CHECK(static_cast<int64_t>(store_->size()) == shape_numel(shape_),
                ShapeError, "tensor store size mismatch for ", shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    std::fill(t.begin(), t.end(), v);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (S& v : t) v = static_cast<S>(rng.normal() * stddev);
    return t;
  }
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (S& v : t) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }
  static Tensor from_values(Shape shape, std::initializer_list<S> vals) {
    Tensor t(shape);
    NEFIC_CHECK(static_cast<int64_t>(vals.size()) == t.numel(), ShapeError,
                "from_values: ", vals.size(), " values for ", shape_str(shape));
    std::copy(vals.begin(), vals.end(), t.begin());
    return t;
  }
  static Tensor scalar(S v) { return full({1}, v); }

  bool defined() const { return store_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t ndim() const { return shape_.size(); }
  int64_t numel() const { return store_ ? static_cast<int64_t>(store_->size()) : 0; }

  S* data() { return store_->data(); }
  const S* data() const { return store_->data(); }
  S* begin() { return data(); }
  S* end() { return data() + numel(); }
  const S* begin() const { return data(); }
  const S* end() const { return data() + numel(); }

  S& operator[](int64_t i) { return (*store_)[i]; }
  const S& operator[](int64_t i) const { return (*store_)[i]; }

  // Row-major multi-index accessors for the common ranks.
  S& at(int64_t i, int64_t j) { return (*store_)[i * shape_[1] + j]; }
  const S& at(int64_t i, int64_t j) const { return (*store_)[i * shape_[1] + j]; }
  S& at(int64_t i, int64_t j, int64_t k) {
    return (*store_)[(i * shape_[1] + j) * shape_[2] + k];
  }
  const S& at(int64_t i, int64_t j, int64_t k) const {
    return (*store_)[(i * shape_[1] + j) * shape_[2] + k];
  }
  S& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return (*store_)[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const S& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return (*store_)[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  // Shares the underlying buffer.
  Tensor reshape(Shape new_shape) const {
    NEFIC_CHECK(shape_numel(new_shape) == numel(), ShapeError, "reshape ",
                shape_str(shape_), " -> ", shape_str(new_shape));
    return Tensor(std::move(new_shape), store_);
  }

  Tensor clone() const {
    Tensor t(shape_);
    std::copy(begin(), end(), t.begin());
    return t;
  }

  template <class T2>
  Tensor<T2> cast() const {
    Tensor<T2> t(shape_);
    const S* src = data();
    for (int64_t i = 0; i < numel(); ++i) t[i] = static_cast<T2>(src[i]);
    return t;
  }

  S item() const {
    NEFIC_CHECK(numel() == 1, ShapeError, "item() on ", shape_str(shape_));
    return (*store_)[0];
  }

  void fill(S v) { std::fill(begin(), end(), v); }

  void add_(const Tensor& other) {
    NEFIC_CHECK(numel() == other.numel(), ShapeError, "add_ size mismatch");
    const S* o = other.data();
    S* d = data();
    for (int64_t i = 0; i < numel(); ++i) d[i] += o[i];
  }

  bool all_finite() const {
    for (const S& v : *store_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  double abs_max() const {
    double m = 0;
    for (const S& v : *store_) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

  double sum_double() const {
    double acc = 0;
    for (const S& v : *store_) acc += static_cast<double>(v);
    return acc;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> store_;
};

template <class S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
  return a.shape() == b.shape();
}

}  // namespace nefic

#endif  // NEFIC_TENSOR_HPP_

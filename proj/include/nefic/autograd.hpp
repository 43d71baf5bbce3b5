// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_AUTOGRAD_HPP_
#define NEFIC_AUTOGRAD_HPP_

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nefic/tensor.hpp"

namespace nefic {

// Reverse-mode autodiff over a dynamically built graph. Nodes own their
// inputs through shared_ptr, so a whole step's graph is released when the
// loss variable goes out of scope. Gradients are only propagated into
// subgraphs that contain trainable leaves; frozen parameters never receive
// a gradient buffer, which is what the stage-wise trainable-set checks key on.
template <class S>
struct NodeT;

template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<NodeT<S>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<S> value, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  NodeT<S>* node() const { return node_.get(); }
  const std::shared_ptr<NodeT<S>>& node_ptr() const { return node_; }

  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& value() { return node_->value; }
  const Tensor<S>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.defined(); }
  const Shape& shape() const { return node_->value.shape(); }
  int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  S item() const { return node_->value.item(); }

  void clear_grad() { node_->grad = Tensor<S>(); }

 private:
  std::shared_ptr<NodeT<S>> node_;
};

template <class S>
struct NodeT {
  Tensor<S> value;
  Tensor<S> grad;  // lazily allocated during backward
  std::vector<Var<S>> inputs;
  std::function<void(NodeT<S>&)> backward_fn;
  bool requires_grad = false;

  Tensor<S>& ensure_grad() {
    if (!grad.defined()) grad = Tensor<S>::zeros(value.shape());
    return grad;
  }
  // Accumulates a gradient piece into an input if it participates in training.
  static void accum(const Var<S>& in, const Tensor<S>& piece) {
    if (!in.requires_grad()) return;
    in.node()->ensure_grad().add_(piece);
  }
};

template <class S>
Var<S> make_node(Tensor<S> value, std::vector<Var<S>> inputs,
                 std::function<void(NodeT<S>&)> backward_fn) {
  auto n = std::make_shared<NodeT<S>>();
  n->value = std::move(value);
  bool req = false;
  for (const auto& in : inputs) req = req || in.requires_grad();
  n->requires_grad = req;
  if (req) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(backward_fn);
  }
  return Var<S>(std::move(n));
}

// Runs reverse accumulation from a scalar root.
template <class S>
void backward(const Var<S>& root) {
  NEFIC_CHECK(root.numel() == 1, ShapeError, "backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order topological sort.
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  struct Frame {
    NodeT<S>* node;
    size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  seen.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.node->inputs.size()) {
      NodeT<S>* child = f.node->inputs[f.next_input++].node();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().fill(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<S>* n = *it;
    if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise / scalar ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> constant(Tensor<S> t) {
  return Var<S>::leaf(std::move(t), false);
}

template <class S>
Var<S> detach(const Var<S>& x) {
  return Var<S>::leaf(x.value(), false);
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(same_shape(a.value(), b.value()), ShapeError, "add: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
  return make_node<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) {
    NodeT<S>::accum(a, n.grad);
    NodeT<S>::accum(b, n.grad);
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(same_shape(a.value(), b.value()), ShapeError, "sub: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
  return make_node<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) {
    NodeT<S>::accum(a, n.grad);
    if (b.requires_grad()) {
      Tensor<S>& g = b.node()->ensure_grad();
      const S* pg = n.grad.data();
      S* pb2 = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) pb2[i] -= pg[i];
    }
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(same_shape(a.value(), b.value()), ShapeError, "mul: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
  return make_node<S>(std::move(out), {a, b}, [a, b](NodeT<S>& n) {
    if (a.requires_grad()) {
      Tensor<S>& g = a.node()->ensure_grad();
      const S* pg = n.grad.data();
      const S* pb2 = b.value().data();
      S* pa2 = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) pa2[i] += pg[i] * pb2[i];
    }
    if (b.requires_grad()) {
      Tensor<S>& g = b.node()->ensure_grad();
      const S* pg = n.grad.data();
      const S* pa2 = a.value().data();
      S* pb2 = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) pb2[i] += pg[i] * pa2[i];
    }
  });
}

template <class S>
Var<S> divide(const Var<S>& a, const Var<S>& b) {
  NEFIC_CHECK(same_shape(a.value(), b.value()), ShapeError, "divide: ",
              shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor<S> out(a.shape());
  const S* pa = a.value().data();
  const S* pb = b.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = pa[i] / pb[i];
  Tensor<S> saved = out;  // a/b, reused in backward
  return make_node<S>(std::move(out), {a, b}, [a, b, saved](NodeT<S>& n) {
    const S* pg = n.grad.data();
    const S* pb2 = b.value().data();
    if (a.requires_grad()) {
      Tensor<S>& g = a.node()->ensure_grad();
      S* pa2 = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) pa2[i] += pg[i] / pb2[i];
    }
    if (b.requires_grad()) {
      Tensor<S>& g = b.node()->ensure_grad();
      const S* pq = saved.data();
      S* gb = g.data();
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= pg[i] * pq[i] / pb2[i];
    }
  });
}

template <class S>
Var<S> add_scalar(const Var<S>& x, S c) {
  Tensor<S> out(x.shape());
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[i] + c;
  return make_node<S>(std::move(out), {x},
                      [x](NodeT<S>& n) { NodeT<S>::accum(x, n.grad); });
}

template <class S>
Var<S> mul_scalar(const Var<S>& x, S c) {
  Tensor<S> out(x.shape());
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[i] * c;
  return make_node<S>(std::move(out), {x}, [x, c](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    Tensor<S>& g = x.node()->ensure_grad();
    const S* pg = n.grad.data();
    S* pd = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) pd[i] += pg[i] * c;
  });
}

template <class S>
Var<S> neg(const Var<S>& x) {
  return mul_scalar(x, S(-1));
}

namespace detail {
// Shared machinery for y = f(x) whose derivative is expressible from the
// cached input and/or output values.
template <class S, class Fwd, class Bwd>
Var<S> unary_op(const Var<S>& x, Fwd fwd, Bwd dfdx) {
  Tensor<S> out(x.shape());
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = fwd(px[i]);
  Tensor<S> saved_out = out;
  return make_node<S>(std::move(out), {x}, [x, saved_out, dfdx](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    Tensor<S>& g = x.node()->ensure_grad();
    const S* pg = n.grad.data();
    const S* px2 = x.value().data();
    const S* py = saved_out.data();
    S* pd = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) pd[i] += pg[i] * dfdx(px2[i], py[i]);
  });
}
}  // namespace detail

template <class S>
Var<S> relu(const Var<S>& x) {
  return detail::unary_op(
      x, [](S v) { return v > S(0) ? v : S(0); },
      [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
Var<S> leaky_relu(const Var<S>& x, S slope = S(0.2)) {
  return detail::unary_op(
      x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary_op(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var<S> silu(const Var<S>& x) {
  return detail::unary_op(
      x,
      [](S v) { return v / (S(1) + std::exp(-v)); },
      [](S v, S) {
        S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) + v * (S(1) - s));
      });
}

template <class S>
Var<S> tanh_op(const Var<S>& x) {
  return detail::unary_op(x, [](S v) { return std::tanh(v); },
                          [](S, S y) { return S(1) - y * y; });
}

template <class S>
Var<S> exp_op(const Var<S>& x) {
  return detail::unary_op(x, [](S v) { return std::exp(v); },
                          [](S, S y) { return y; });
}

template <class S>
Var<S> log_op(const Var<S>& x) {
  return detail::unary_op(x, [](S v) { return std::log(v); },
                          [](S v, S) { return S(1) / v; });
}

template <class S>
Var<S> softplus(const Var<S>& x) {
  return detail::unary_op(
      x,
      [](S v) {
        // Overflow-safe log(1+e^v).
        return v > S(30) ? v : std::log1p(std::exp(v));
      },
      [](S v, S) { return S(1) / (S(1) + std::exp(-v)); });
}

template <class S>
Var<S> erf_op(const Var<S>& x) {
  const S two_over_sqrt_pi = S(1.1283791670955126);
  return detail::unary_op(
      x, [](S v) { return std::erf(v); },
      [two_over_sqrt_pi](S v, S) { return two_over_sqrt_pi * std::exp(-v * v); });
}

template <class S>
Var<S> square(const Var<S>& x) {
  return detail::unary_op(x, [](S v) { return v * v; },
                          [](S v, S) { return S(2) * v; });
}

// max(x, c); the clamped region passes no gradient.
template <class S>
Var<S> clamp_min(const Var<S>& x, S c) {
  return detail::unary_op(
      x, [c](S v) { return v > c ? v : c; },
      [c](S v, S) { return v > c ? S(1) : S(0); });
}

// Clamp to the displayable [0,1] range; gradient passes strictly inside.
template <class S>
Var<S> clamp01(const Var<S>& x) {
  return detail::unary_op(
      x, [](S v) { return v < S(0) ? S(0) : (v > S(1) ? S(1) : v); },
      [](S v, S) { return (v > S(0) && v < S(1)) ? S(1) : S(0); });
}

// Nearest-integer rounding with ties to even; straight-through gradient.
template <class S>
Var<S> round_ste(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const S* px = x.value().data();
  S* po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = std::nearbyint(px[i]);
  return make_node<S>(std::move(out), {x},
                      [x](NodeT<S>& n) { NodeT<S>::accum(x, n.grad); });
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
  S acc = 0;
  const S* px = x.value().data();
  for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
  return make_node<S>(Tensor<S>::scalar(acc), {x}, [x](NodeT<S>& n) {
    if (!x.requires_grad()) return;
    Tensor<S>& g = x.node()->ensure_grad();
    S gv = n.grad[0];
    S* pd = g.data();
    for (int64_t i = 0; i < g.numel(); ++i) pd[i] += gv;
  });
}

template <class S>
Var<S> mean_all(const Var<S>& x) {
  return mul_scalar(sum_all(x), S(1) / S(x.numel()));
}

template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace nefic

#endif  // NEFIC_AUTOGRAD_HPP_

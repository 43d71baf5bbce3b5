// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_NN_HPP_
#define NEFIC_NN_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nefic/ops.hpp"
#include "nefic/rng.hpp"

namespace nefic {

// Named registry of parameter leaves. Modules register their leaves under a
// hierarchical dotted prefix; optimizers, checkpoints and freeze logic all
// address parameters through it.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var<S>* var;
  };

  void add(const std::string& name, Var<S>* v) {
    for (const auto& e : entries_)
      NEFIC_CHECK(e.name != name, ConfigError, "duplicate parameter ", name);
    entries_.push_back({name, v});
  }

  const std::vector<Entry>& entries() const { return entries_; }

  Var<S>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    return nullptr;
  }

  int64_t numel_total() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.var->numel();
    return n;
  }

  int64_t numel_trainable() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.var->requires_grad()) n += e.var->numel();
    return n;
  }

  void set_trainable_all(bool flag) {
    for (auto& e : entries_) e.var->node()->requires_grad = flag;
  }

  // Marks parameters whose name contains `needle` (set semantics compose by
  // calling repeatedly after a freeze-all).
  int set_trainable_matching(const std::string& needle, bool flag) {
    int hits = 0;
    for (auto& e : entries_) {
      if (e.name.find(needle) != std::string::npos) {
        e.var->node()->requires_grad = flag;
        ++hits;
      }
    }
    return hits;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var->clear_grad();
  }

  // FNV-1a over raw parameter bytes; used to prove frozen weights stay put.
  uint64_t checksum_matching(const std::string& needle) const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& e : entries_) {
      if (e.name.find(needle) == std::string::npos) continue;
      const auto* p = reinterpret_cast<const unsigned char*>(e.var->value().data());
      const size_t n = size_t(e.var->numel()) * sizeof(S);
      for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
      }
    }
    return h;
  }
  uint64_t checksum_all() const { return checksum_matching(""); }

 private:
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Initializers
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> init_uniform_fanin(const Shape& shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(fan_in));
  return Tensor<S>::rand_uniform(shape, rng, S(-bound), S(bound));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class S>
struct LinearLayer {
  Var<S> w, b;

  LinearLayer() = default;
  LinearLayer(int64_t in, int64_t out, Rng& rng, bool bias = true) {
    w = Var<S>::leaf(init_uniform_fanin<S>({out, in}, in, rng), true);
    if (bias) b = Var<S>::leaf(Tensor<S>::zeros({out}), true);
  }
  Var<S> forward(const Var<S>& x) const { return linear(x, w, b); }
  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", &w);
    if (b.defined()) ps.add(prefix + ".b", &b);
  }
};

template <class S>
struct Conv2dLayer {
  Var<S> w, b;
  int64_t stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride_,
              int64_t pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = Var<S>::leaf(init_uniform_fanin<S>({out_ch, in_ch, k, k}, in_ch * k * k, rng),
                     true);
    b = Var<S>::leaf(Tensor<S>::zeros({out_ch}), true);
  }
  Var<S> forward(const Var<S>& x) const { return conv2d(x, w, b, stride, pad); }
  void register_params(ParamStore<S>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", &w);
    ps.add(prefix + ".b", &b);
  }
};

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.
// ---------------------------------------------------------------------------

template <class S>
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
  };

  AdamW() = default;
  explicit AdamW(Options opt) : opt_(opt) {}

  // Attaches to the currently-trainable subset of the store.
  void attach(const ParamStore<S>& ps) {
    params_.clear();
    slots_.clear();
    for (const auto& e : ps.entries()) {
      if (!e.var->requires_grad()) continue;
      params_.push_back(*e.var);
      slots_.push_back({Tensor<S>::zeros(e.var->shape()),
                        Tensor<S>::zeros(e.var->shape())});
    }
    t_ = 0;
  }

  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  size_t num_params() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.clear_grad();
  }

  // Returns the global grad norm seen this step (before any update).
  double step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    double sq = 0.0;
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      const S* g = params_[i].grad().data();
      for (int64_t j = 0; j < params_[i].numel(); ++j) sq += double(g[j]) * double(g[j]);
    }
    const double gnorm = std::sqrt(sq);
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) continue;
      S* wp = params_[i].value().data();
      const S* g = params_[i].grad().data();
      S* m = slots_[i].m.data();
      S* v = slots_[i].v.data();
      const int64_t n = params_[i].numel();
      for (int64_t j = 0; j < n; ++j) {
        const double gj = double(g[j]);
        const double mj = opt_.beta1 * double(m[j]) + (1.0 - opt_.beta1) * gj;
        const double vj = opt_.beta2 * double(v[j]) + (1.0 - opt_.beta2) * gj * gj;
        m[j] = S(mj);
        v[j] = S(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double upd = mhat / (std::sqrt(vhat) + opt_.eps);
        upd += opt_.weight_decay * double(wp[j]);
        wp[j] = S(double(wp[j]) - opt_.lr * upd);
      }
    }
    return gnorm;
  }

 private:
  struct Slot {
    Tensor<S> m, v;
  };
  Options opt_;
  std::vector<Var<S>> params_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace nefic

#endif  // NEFIC_NN_HPP_

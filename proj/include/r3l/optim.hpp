#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "r3l/tensor.hpp"

namespace r3l {

// Named parameters with matching gradient slots. Insertion order is the
// declared order used by checkpoints.
template <typename S>
struct ParamStoreT {
  std::vector<std::string> order;
  std::unordered_map<std::string, TensorT<S>> params;
  std::unordered_map<std::string, TensorT<S>> grads;

  TensorT<S>& add(const std::string& name, TensorT<S> init) {
    if (params.count(name)) fail("parameter '", name, "' already exists");
    order.push_back(name);
    grads.emplace(name, TensorT<S>::zeros(init.shape));
    return params.emplace(name, std::move(init)).first->second;
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }

  TensorT<S>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) fail("unknown parameter '", name, "'");
    return it->second;
  }
  const TensorT<S>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) fail("unknown parameter '", name, "'");
    return it->second;
  }
  TensorT<S>& grad(const std::string& name) {
    auto it = grads.find(name);
    if (it == grads.end()) fail("unknown parameter '", name, "'");
    return it->second;
  }
  const TensorT<S>& grad(const std::string& name) const {
    auto it = grads.find(name);
    if (it == grads.end()) fail("unknown parameter '", name, "'");
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, g] : grads) g.data.setZero();
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& name : order) n += params.at(name).size();
    return n;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& name : order) {
      h = fnv1a64(name.data(), name.size(), h);
      const auto& t = params.at(name);
      h = fnv1a64(t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(S), h);
    }
    return h;
  }
};

using ParamStore = ParamStoreT<float>;

// Bias-corrected Adam. beta/epsilon defaults follow the usual PPO stacks.
template <typename S>
struct AdamStateT {
  std::int64_t step = 0;
  S lr = S(2.5e-4);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-5);
  std::unordered_map<std::string, TensorT<S>> m, v;

  void init(const ParamStoreT<S>& store) {
    m.clear();
    v.clear();
    for (const auto& name : store.order) {
      m.emplace(name, TensorT<S>::zeros(store.params.at(name).shape));
      v.emplace(name, TensorT<S>::zeros(store.params.at(name).shape));
    }
    step = 0;
  }
};

using AdamState = AdamStateT<float>;

// Scales all gradients so their global L2 norm does not exceed max_norm.
// Returns the pre-clip norm.
template <typename S>
S clip_grad_norm(ParamStoreT<S>& store, S max_norm) {
  double sq = 0.0;
  for (const auto& name : store.order)
    sq += static_cast<double>(store.grads.at(name).data.squaredNorm());
  S norm = static_cast<S>(std::sqrt(sq));
  if (norm > max_norm && norm > S(0)) {
    S scale = max_norm / norm;
    for (const auto& name : store.order) store.grads.at(name).data *= scale;
  }
  return norm;
}

template <typename S>
void adam_step(ParamStoreT<S>& store, AdamStateT<S>& state) {
  for (const auto& name : store.order) {
    if (!store.grads.at(name).all_finite())
      fail("adam: non-finite gradient for parameter '", name, "'");
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1),
                              static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2),
                              static_cast<double>(state.step));
  for (const auto& name : store.order) {
    auto& p = store.params.at(name).data;
    const auto& g = store.grads.at(name).data;
    auto& m = state.m.at(name).data;
    auto& v = state.v.at(name).data;
    m = state.beta1 * m + (S(1) - state.beta1) * g;
    v = (state.beta2 * v.array() + (S(1) - state.beta2) * g.array().square())
            .matrix();
    S a1 = static_cast<S>(1.0 / bc1);
    S a2 = static_cast<S>(1.0 / bc2);
    p.array() -= state.lr * (m.array() * a1) /
                 ((v.array() * a2).sqrt() + state.eps);
  }
}

}  // namespace r3l

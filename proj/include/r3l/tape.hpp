#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "r3l/ops.hpp"
#include "r3l/optim.hpp"
#include "r3l/tensor.hpp"

namespace r3l {

// Reverse-mode tape over a fixed op set. Ops execute eagerly; backward()
// replays recorded closures in reverse creation order. One tape per loss.
template <typename S>
class TapeT {
 public:
  using Tensor = TensorT<S>;

  int leaf(Tensor value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  // Registers a parameter as a leaf; repeated calls return the same node.
  int param(ParamStoreT<S>& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    int id = push(store.param(name), true, nullptr);
    param_nodes_.emplace(name, id);
    return id;
  }

  const Tensor& value(int id) const { return nodes_[idx(id)].value; }

  Tensor& grad(int id) {
    Node& n = nodes_[idx(id)];
    if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  std::int64_t degenerate_cosine_count() const { return degenerate_cosines_; }

  int conv2d(int x, int w, int b, int stride) {
    const Tensor* bias = b >= 0 ? &value(b) : nullptr;
    Tensor out = conv2d_forward(value(x), value(w), bias, stride);
    bool ng = needs(x) || needs(w) || (b >= 0 && needs(b));
    return push(std::move(out), ng, [this, x, w, b, stride](int self) {
      const Tensor& g = grad(self);
      Tensor* dx = needs(x) ? &grad(x) : nullptr;
      Tensor* dw = needs(w) ? &grad(w) : nullptr;
      Tensor* db = (b >= 0 && needs(b)) ? &grad(b) : nullptr;
      conv2d_backward(value(x), value(w), stride, g, dx, dw, db);
    });
  }

  int dense(int x, int w, int b) {
    const Tensor* bias = b >= 0 ? &value(b) : nullptr;
    Tensor out = dense_forward(value(x), value(w), bias);
    bool ng = needs(x) || needs(w) || (b >= 0 && needs(b));
    return push(std::move(out), ng, [this, x, w, b](int self) {
      const Tensor& g = grad(self);
      Tensor* dx = needs(x) ? &grad(x) : nullptr;
      Tensor* dw = needs(w) ? &grad(w) : nullptr;
      Tensor* db = (b >= 0 && needs(b)) ? &grad(b) : nullptr;
      dense_backward(value(x), value(w), g, dx, dw, db);
    });
  }

  int relu(int x) {
    Tensor out = relu_forward(value(x));
    return push(std::move(out), needs(x), [this, x](int self) {
      if (!needs(x)) return;
      const auto& xv = value(x).data;
      grad(x).data.array() +=
          grad(self).data.array() * (xv.array() > S(0)).template cast<S>();
    });
  }

  int tanh_op(int x) {
    Tensor out = tanh_forward(value(x));
    return push(std::move(out), needs(x), [this, x](int self) {
      if (!needs(x)) return;
      const auto& yv = value(self).data;
      grad(x).data.array() +=
          grad(self).data.array() * (S(1) - yv.array().square());
    });
  }

  int log_softmax(int x) {
    Tensor out = log_softmax_rows(value(x));
    return push(std::move(out), needs(x), [this, x](int self) {
      if (!needs(x)) return;
      const Tensor& y = value(self);
      int n = y.dim(0), k = y.dim(1);
      auto gm = grad(self).mat(n, k);
      auto dxm = grad(x).mat(n, k);
      for (int i = 0; i < n; ++i) {
        S gsum = gm.row(i).sum();
        dxm.row(i).array() +=
            gm.row(i).array() - y.mat(n, k).row(i).array().exp() * gsum;
      }
    });
  }

  int softmax(int x) {
    Tensor out = softmax_rows(value(x));
    return push(std::move(out), needs(x), [this, x](int self) {
      if (!needs(x)) return;
      const Tensor& p = value(self);
      int n = p.dim(0), k = p.dim(1);
      auto gm = grad(self).mat(n, k);
      auto pm = p.mat(n, k);
      auto dxm = grad(x).mat(n, k);
      for (int i = 0; i < n; ++i) {
        S dot = gm.row(i).cwiseProduct(pm.row(i)).sum();
        dxm.row(i).array() += pm.row(i).array() * (gm.row(i).array() - dot);
      }
    });
  }

  // log pi(a | logits) per row.
  int categorical_log_prob(int logits, std::vector<int> actions) {
    const Tensor& z = value(logits);
    if (z.rank() != 2)
      fail("categorical_log_prob: logits must be rank-2, got ",
           shape_str(z.shape));
    int n = z.dim(0), k = z.dim(1);
    if (static_cast<int>(actions.size()) != n)
      fail("categorical_log_prob: ", actions.size(), " actions for ", n,
           " rows");
    for (int a : actions)
      if (a < 0 || a >= k) fail("categorical_log_prob: action ", a,
                                " out of range [0,", k, ")");
    Tensor ls = log_softmax_rows(z);
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.data[i] = ls.mat(n, k)(i, actions[i]);
    auto saved = std::make_shared<Tensor>(std::move(ls));
    return push(std::move(out), needs(logits),
                [this, logits, actions = std::move(actions), saved](int self) {
                  if (!needs(logits)) return;
                  int n2 = saved->dim(0), k2 = saved->dim(1);
                  auto dzm = grad(logits).mat(n2, k2);
                  auto lsm = saved->mat(n2, k2);
                  const auto& g = grad(self).data;
                  for (int i = 0; i < n2; ++i) {
                    dzm.row(i).array() -= g[i] * lsm.row(i).array().exp();
                    dzm(i, actions[static_cast<std::size_t>(i)]) += g[i];
                  }
                });
  }

  // Entropy of the categorical distribution per row.
  int categorical_entropy(int logits) {
    const Tensor& z = value(logits);
    int n = z.dim(0), k = z.dim(1);
    Tensor ls = log_softmax_rows(z);
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i)
      out.data[i] = -(ls.mat(n, k).row(i).array().exp() *
                      ls.mat(n, k).row(i).array())
                         .sum();
    auto saved = std::make_shared<Tensor>(std::move(ls));
    return push(std::move(out), needs(logits),
                [this, logits, saved](int self) {
                  if (!needs(logits)) return;
                  int n2 = saved->dim(0), k2 = saved->dim(1);
                  auto dzm = grad(logits).mat(n2, k2);
                  auto lsm = saved->mat(n2, k2);
                  const Tensor& h = value(self);
                  const auto& g = grad(self).data;
                  for (int i = 0; i < n2; ++i)
                    dzm.row(i).array() -=
                        g[i] * lsm.row(i).array().exp() *
                        (lsm.row(i).array() + h.data[i]);
                });
  }

  // Cosine of each row of x against fixed anchor rows; gradients flow to x
  // only. Zero-norm rows yield cosine 0 and bump the degenerate counter.
  int cosine_rows(int x, Tensor anchors) {
    Tensor out = cosine_rows_forward(value(x), anchors, &degenerate_cosines_);
    auto saved = std::make_shared<Tensor>(std::move(anchors));
    return push(std::move(out), needs(x), [this, x, saved](int self) {
      if (!needs(x)) return;
      cosine_rows_backward(value(x), *saved, value(self), grad(self),
                           &grad(x));
    });
  }

  // out[i] = concat(src[idx[i][0]], ..., src[idx[i][S-1]]). Used to assemble
  // per-frame embeddings into stacked controller inputs.
  int gather_rows_concat(int src, std::vector<std::vector<int>> idx) {
    const Tensor& s = value(src);
    if (s.rank() != 2) fail("gather_rows_concat: source must be rank-2");
    int u = s.dim(0), m = s.dim(1);
    int n = static_cast<int>(idx.size());
    if (n == 0) fail("gather_rows_concat: empty index list");
    int stack = static_cast<int>(idx[0].size());
    Tensor out = Tensor::zeros({n, stack * m});
    auto sm = s.mat(u, m);
    auto om = out.mat(n, stack * m);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(idx[static_cast<std::size_t>(i)].size()) != stack)
        fail("gather_rows_concat: ragged index list at row ", i);
      for (int j = 0; j < stack; ++j) {
        int r = idx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (r < 0 || r >= u)
          fail("gather_rows_concat: index ", r, " out of range [0,", u, ")");
        om.block(i, j * m, 1, m) = sm.row(r);
      }
    }
    return push(std::move(out), needs(src),
                [this, src, idx = std::move(idx), m, stack](int self) {
                  if (!needs(src)) return;
                  const Tensor& s2 = value(src);
                  auto dsm = grad(src).mat(s2.dim(0), m);
                  int n2 = static_cast<int>(idx.size());
                  auto gm = grad(self).mat(n2, stack * m);
                  for (int i = 0; i < n2; ++i)
                    for (int j = 0; j < stack; ++j)
                      dsm.row(idx[static_cast<std::size_t>(i)]
                                 [static_cast<std::size_t>(j)]) +=
                          gm.block(i, j * m, 1, m);
                });
  }

  int add(int a, int b) { return binary(a, b, "add",
      [](S x, S y) { return x + y; },
      [](S, S, S g) { return g; },
      [](S, S, S g) { return g; }); }

  int sub(int a, int b) { return binary(a, b, "sub",
      [](S x, S y) { return x - y; },
      [](S, S, S g) { return g; },
      [](S, S, S g) { return -g; }); }

  int mul(int a, int b) { return binary(a, b, "mul",
      [](S x, S y) { return x * y; },
      [](S, S y, S g) { return g * y; },
      [](S x, S, S g) { return g * x; }); }

  // min/max route the gradient to the selected operand; ties go to the first.
  int min_op(int a, int b) { return binary(a, b, "min",
      [](S x, S y) { return x <= y ? x : y; },
      [](S x, S y, S g) { return x <= y ? g : S(0); },
      [](S x, S y, S g) { return x <= y ? S(0) : g; }); }

  int max_op(int a, int b) { return binary(a, b, "max",
      [](S x, S y) { return x >= y ? x : y; },
      [](S x, S y, S g) { return x >= y ? g : S(0); },
      [](S x, S y, S g) { return x >= y ? S(0) : g; }); }

  int neg(int a) { return unary(a,
      [](S x) { return -x; },
      [](S, S g) { return -g; }); }

  int exp_op(int a) { return unary(a,
      [](S x) { return std::exp(x); },
      [](S x, S g) { return g * std::exp(x); }); }

  int square(int a) { return unary(a,
      [](S x) { return x * x; },
      [](S x, S g) { return S(2) * g * x; }); }

  int scale(int a, S c) { return unary(a,
      [c](S x) { return c * x; },
      [c](S, S g) { return c * g; }); }

  int add_const(int a, S c) { return unary(a,
      [c](S x) { return x + c; },
      [](S, S g) { return g; }); }

  int clamp(int a, S lo, S hi) { return unary(a,
      [lo, hi](S x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](S x, S g) { return (x > lo && x < hi) ? g : S(0); }); }

  int sum(int a) {
    Tensor out = Tensor::scalar(value(a).data.sum());
    return push(std::move(out), needs(a), [this, a](int self) {
      if (!needs(a)) return;
      grad(a).data.array() += grad(self).data[0];
    });
  }

  int mean(int a) {
    S inv = S(1) / static_cast<S>(value(a).size());
    Tensor out = Tensor::scalar(value(a).data.sum() * inv);
    return push(std::move(out), needs(a), [this, a, inv](int self) {
      if (!needs(a)) return;
      grad(a).data.array() += grad(self).data[0] * inv;
    });
  }

  int reshape(int a, std::vector<int> shape) {
    if (Tensor::count(shape) != value(a).size())
      fail("reshape: ", shape_str(shape), " does not match size ",
           value(a).size());
    Tensor out = value(a);
    out.shape = shape;
    return push(std::move(out), needs(a), [this, a](int self) {
      if (!needs(a)) return;
      grad(a).data += grad(self).data;
    });
  }

  // Reverse sweep from a finite scalar loss.
  void backward(int loss) {
    const Tensor& l = value(loss);
    if (l.size() != 1)
      fail("backward: loss must be a scalar, got ", shape_str(l.shape));
    if (!l.all_finite()) fail_as(ErrorCode::nan_abort, "backward: loss is not finite");
    grad(loss).data[0] += S(1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backprop && n.grad.size() != 0) n.backprop(i);
    }
  }

  // Sweep plus copy into the store's gradient slots. Every parameter in the
  // store must have been recorded on this tape.
  void backward(int loss, ParamStoreT<S>& store) {
    for (const auto& name : store.order)
      if (!param_nodes_.count(name))
        fail("backward: parameter '", name,
             "' was never recorded on this tape");
    backward(loss);
    for (const auto& name : store.order)
      store.grad(name) = grad(param_nodes_.at(name));
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(int)> backprop;
  };

  std::size_t idx(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      fail("tape: node ", id, " does not exist");
    return static_cast<std::size_t>(id);
  }

  bool needs(int id) const { return nodes_[idx(id)].needs_grad; }

  int push(Tensor value, bool needs_grad, std::function<void(int)> backprop) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backprop = needs_grad ? std::move(backprop) : nullptr;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename F, typename Da, typename Db>
  int binary(int a, int b, const char* op, F f, Da da, Db db) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv))
      fail(op, ": shape mismatch ", shape_str(av.shape), " vs ",
           shape_str(bv.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (std::int64_t i = 0; i < av.size(); ++i)
      out.data[i] = f(av.data[i], bv.data[i]);
    bool ng = needs(a) || needs(b);
    return push(std::move(out), ng, [this, a, b, da, db](int self) {
      const Tensor& av2 = value(a);
      const Tensor& bv2 = value(b);
      const Tensor& g = grad(self);
      if (needs(a)) {
        Tensor& ga = grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i)
          ga.data[i] += da(av2.data[i], bv2.data[i], g.data[i]);
      }
      if (needs(b)) {
        Tensor& gb = grad(b);
        for (std::int64_t i = 0; i < g.size(); ++i)
          gb.data[i] += db(av2.data[i], bv2.data[i], g.data[i]);
      }
    });
  }

  template <typename F, typename D>
  int unary(int a, F f, D d) {
    const Tensor& av = value(a);
    Tensor out = Tensor::zeros(av.shape);
    for (std::int64_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
    return push(std::move(out), needs(a), [this, a, d](int self) {
      if (!needs(a)) return;
      const Tensor& av2 = value(a);
      const Tensor& g = grad(self);
      Tensor& ga = grad(a);
      for (std::int64_t i = 0; i < g.size(); ++i)
        ga.data[i] += d(av2.data[i], g.data[i]);
    });
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  std::int64_t degenerate_cosines_ = 0;
};

using Tape = TapeT<float>;

}  // namespace r3l

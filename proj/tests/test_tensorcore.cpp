#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "r3l/ops.hpp"
#include "r3l/optim.hpp"
#include "r3l/tape.hpp"
#include "support/oracles.hpp"

using r3l::Pcg32;
using r3l::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Pcg32& rng, float scale = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.data[i] = scale * static_cast<float>(rng.next_gaussian());
  return t;
}

template <typename S>
r3l::TensorT<S> random_tensor_t(std::vector<int> shape, Pcg32& rng,
                                double scale = 1.0) {
  auto t = r3l::TensorT<S>::zeros(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.data[i] = static_cast<S>(scale * rng.next_gaussian());
  return t;
}

}  // namespace

TEST_CASE("conv2d zero input gives zero output") {
  Pcg32 rng(11);
  Tensor x = Tensor::zeros({1, 1, 3, 3});
  Tensor k = random_tensor({1, 1, 2, 2}, rng);
  Tensor y = r3l::conv2d_forward(x, k, 1);
  CHECK(y.shape == std::vector<int>{1, 1, 2, 2});
  CHECK(y.data.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("conv2d 1x1 kernel scales the input") {
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor k = Tensor::from({1, 1, 1, 1}, {2});
  Tensor y = r3l::conv2d_forward(x, k, 1);
  CHECK(y.data[0] == doctest::Approx(2));
  CHECK(y.data[1] == doctest::Approx(4));
  CHECK(y.data[2] == doctest::Approx(6));
  CHECK(y.data[3] == doctest::Approx(8));
}

TEST_CASE("conv2d matches the hand cross-correlation oracle") {
  Tensor x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k = Tensor::from({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor y = r3l::conv2d_forward(x, k, 1);
  // windows: 1+5, 2+6, 4+8, 5+9
  CHECK(y.data[0] == doctest::Approx(6));
  CHECK(y.data[1] == doctest::Approx(8));
  CHECK(y.data[2] == doctest::Approx(12));
  CHECK(y.data[3] == doctest::Approx(14));
}

TEST_CASE("conv2d agrees with the reference loop on random instances") {
  Pcg32 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    int n = 1 + static_cast<int>(rng.next_below(3));
    int c = 1 + static_cast<int>(rng.next_below(3));
    int k = 1 + static_cast<int>(rng.next_below(4));
    int kh = 1 + static_cast<int>(rng.next_below(3));
    int kw = 1 + static_cast<int>(rng.next_below(3));
    int stride = 1 + static_cast<int>(rng.next_below(2));
    int h = kh + static_cast<int>(rng.next_below(5));
    int w = kw + static_cast<int>(rng.next_below(5));
    Tensor x = random_tensor({n, c, h, w}, rng);
    Tensor kern = random_tensor({k, c, kh, kw}, rng);
    Tensor got = r3l::conv2d_forward(x, kern, stride);
    Tensor want = oracle::conv2d_reference(x, kern, stride);
    REQUIRE(got.shape == want.shape);
    for (std::int64_t i = 0; i < got.size(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-4));
  }
}

TEST_CASE("conv2d rejects shape mismatches with a named dimension") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 2, 2});
  CHECK_THROWS_WITH_AS(r3l::conv2d_forward(x, k, 1),
                       doctest::Contains("channel"), r3l::Error);
  Tensor kbig = Tensor::zeros({1, 2, 6, 2});
  CHECK_THROWS_WITH_AS(r3l::conv2d_forward(x, kbig, 1),
                       doctest::Contains("height"), r3l::Error);
}

TEST_CASE("conv2d forward does not mutate its input") {
  Pcg32 rng(3);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng);
  std::uint64_t before = x.checksum();
  (void)r3l::conv2d_forward(x, k, 2);
  CHECK(x.checksum() == before);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  r3l::ParamStore store;
  store.add("w", Tensor::from({2, 3}, {1, -2, 3, 4, -5, 6}));
  r3l::Tape tape;
  int w = tape.param(store, "w");
  int loss = tape.sum(w);
  tape.backward(loss, store);
  for (std::int64_t i = 0; i < 6; ++i)
    CHECK(store.grad("w").data[i] == doctest::Approx(1.0f));
}

TEST_CASE("backward of half sum of squares reproduces the weights") {
  r3l::ParamStore store;
  store.add("w", Tensor::from({3}, {1, -2, 3}));
  r3l::Tape tape;
  int w = tape.param(store, "w");
  int loss = tape.scale(tape.sum(tape.square(w)), 0.5f);
  tape.backward(loss, store);
  CHECK(store.grad("w").data[0] == doctest::Approx(1.0f));
  CHECK(store.grad("w").data[1] == doctest::Approx(-2.0f));
  CHECK(store.grad("w").data[2] == doctest::Approx(3.0f));
}

TEST_CASE("backward reports parameters missing from the tape") {
  r3l::ParamStore store;
  store.add("used", Tensor::from({1}, {2}));
  store.add("detached", Tensor::from({1}, {5}));
  r3l::Tape tape;
  int w = tape.param(store, "used");
  int loss = tape.sum(w);
  CHECK_THROWS_WITH_AS(tape.backward(loss, store),
                       doctest::Contains("detached"), r3l::Error);
}

// Central-difference check for a two-layer dense net, float parameters
// against a double-precision oracle of the same loss.
TEST_CASE("dense net gradients match central finite differences") {
  Pcg32 rng(1234);
  auto x = random_tensor_t<double>({4, 6}, rng);
  auto w1 = random_tensor_t<double>({5, 6}, rng, 0.5);
  auto b1 = random_tensor_t<double>({5}, rng, 0.1);
  auto w2 = random_tensor_t<double>({3, 5}, rng, 0.5);
  auto b2 = random_tensor_t<double>({3}, rng, 0.1);

  auto loss_fn = [&](const std::vector<double>& w1_flat) {
    auto w1_mod = w1;
    for (std::int64_t i = 0; i < w1_mod.size(); ++i)
      w1_mod.data[i] = w1_flat[static_cast<std::size_t>(i)];
    auto h = r3l::relu_forward(r3l::dense_forward(x, w1_mod, &b1));
    auto y = r3l::dense_forward(h, w2, &b2);
    return static_cast<double>(y.data.array().square().sum());
  };

  r3l::ParamStoreT<double> store;
  store.add("w1", w1);
  store.add("b1", b1);
  store.add("w2", w2);
  store.add("b2", b2);
  r3l::TapeT<double> tape;
  int xi = tape.leaf(x);
  int h = tape.relu(tape.dense(xi, tape.param(store, "w1"),
                               tape.param(store, "b1")));
  int y = tape.dense(h, tape.param(store, "w2"), tape.param(store, "b2"));
  int loss = tape.sum(tape.square(y));
  tape.backward(loss, store);

  std::vector<double> flat(w1.data.data(), w1.data.data() + w1.size());
  auto fd = oracle::central_differences<double>(loss_fn, flat, 1e-4);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    double analytic = store.grad("w1").data[static_cast<std::int64_t>(i)];
    CHECK(oracle::relative_error(analytic, fd[i]) < 1e-3);
  }
}

// Every layer type, >= 20 random instances, 1e-3 relative tolerance. This is
// the module-level version of the acceptance gradient oracle.
TEST_CASE("per-layer gradient check against finite differences") {
  using S = double;
  Pcg32 rng(99);
  struct Case {
    const char* name;
    std::function<int(r3l::TapeT<S>&, int)> wire;
    std::vector<int> shape;
  };

  auto run_case = [&](const char* name,
                      const std::function<int(r3l::TapeT<S>&, int)>& wire,
                      const std::vector<int>& shape) {
    for (int inst = 0; inst < 20; ++inst) {
      auto w0 = random_tensor_t<S>(shape, rng);
      r3l::ParamStoreT<S> store;
      store.add("w", w0);
      r3l::TapeT<S> tape;
      int w = tape.param(store, "w");
      int out = wire(tape, w);
      int loss = tape.mean(tape.square(out));
      tape.backward(loss, store);

      auto loss_fn = [&](const std::vector<S>& flat) {
        auto wm = w0;
        for (std::int64_t i = 0; i < wm.size(); ++i)
          wm.data[i] = flat[static_cast<std::size_t>(i)];
        r3l::TapeT<S> t2;
        int w2 = t2.leaf(wm);
        int out2 = wire(t2, w2);
        int l2 = t2.mean(t2.square(out2));
        return static_cast<double>(t2.value(l2).data[0]);
      };
      std::vector<S> flat(w0.data.data(), w0.data.data() + w0.size());
      auto fd = oracle::central_differences<S>(loss_fn, flat, 1e-4);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        double analytic = store.grad("w").data[static_cast<std::int64_t>(i)];
        INFO(name, " instance ", inst, " index ", i);
        CHECK(oracle::relative_error(analytic, fd[i]) < 1e-3);
      }
    }
  };

  Pcg32 data_rng(7);
  auto conv_in = random_tensor_t<S>({2, 2, 5, 5}, data_rng);
  run_case("conv2d",
           [&](r3l::TapeT<S>& t, int w) {
             return t.conv2d(t.leaf(conv_in), w, -1, 2);
           },
           {3, 2, 2, 2});
  auto dense_in = random_tensor_t<S>({3, 4}, data_rng);
  run_case("dense",
           [&](r3l::TapeT<S>& t, int w) {
             return t.dense(t.leaf(dense_in), w, -1);
           },
           {5, 4});
  run_case("relu", [](r3l::TapeT<S>& t, int w) { return t.relu(w); }, {3, 4});
  run_case("tanh", [](r3l::TapeT<S>& t, int w) { return t.tanh_op(w); },
           {3, 4});
  run_case("softmax", [](r3l::TapeT<S>& t, int w) { return t.softmax(w); },
           {3, 4});
  run_case("log_softmax",
           [](r3l::TapeT<S>& t, int w) { return t.log_softmax(w); }, {3, 4});
  std::vector<int> actions = {1, 0, 3};
  run_case("categorical_log_prob",
           [&](r3l::TapeT<S>& t, int w) {
             return t.categorical_log_prob(w, actions);
           },
           {3, 4});
  run_case("categorical_entropy",
           [](r3l::TapeT<S>& t, int w) { return t.categorical_entropy(w); },
           {3, 4});
  auto anchors = random_tensor_t<S>({5, 4}, data_rng);
  run_case("cosine_rows",
           [&](r3l::TapeT<S>& t, int w) { return t.cosine_rows(w, anchors); },
           {3, 4});
  std::vector<std::vector<int>> stack_idx = {{0, 1, 1, 2}, {2, 0, 1, 0}};
  run_case("gather_rows_concat",
           [&](r3l::TapeT<S>& t, int w) {
             return t.gather_rows_concat(w, stack_idx);
           },
           {3, 4});
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  r3l::ParamStore store;
  store.add("w", Tensor::from({2}, {1.5f, -0.5f}));
  r3l::AdamState adam;
  adam.init(store);
  store.zero_grads();
  r3l::adam_step(store, adam);
  CHECK(adam.step == 1);
  CHECK(store.param("w").data[0] == doctest::Approx(1.5f));
  CHECK(store.param("w").data[1] == doctest::Approx(-0.5f));
}

TEST_CASE("adam first step moves by about lr in the gradient sign") {
  r3l::ParamStore store;
  store.add("w", Tensor::from({1}, {0.25f}));
  r3l::AdamState adam;
  adam.lr = 0.001f;
  adam.init(store);
  store.grad("w").data[0] = 3.7f;
  r3l::adam_step(store, adam);
  // first bias-corrected step is lr * g / (|g| + eps) ~ lr * sign(g)
  CHECK(store.param("w").data[0] ==
        doctest::Approx(0.25f - 0.001f).epsilon(1e-4));
}

TEST_CASE("adam aborts on non-finite gradients naming the parameter") {
  r3l::ParamStore store;
  store.add("theta", Tensor::from({1}, {0.0f}));
  r3l::AdamState adam;
  adam.init(store);
  store.grad("theta").data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(r3l::adam_step(store, adam),
                       doctest::Contains("theta"), r3l::Error);
}

TEST_CASE("identical seeds give bit-identical training steps") {
  auto run = [](std::uint64_t seed) {
    Pcg32 rng(seed);
    r3l::ParamStore store;
    store.add("w", r3l::orthogonal_init<float>({4, 3}, std::sqrt(2.0), rng));
    store.add("b", Tensor::zeros({4}));
    r3l::AdamState adam;
    adam.init(store);
    Tensor x = random_tensor({5, 3}, rng);
    for (int iter = 0; iter < 5; ++iter) {
      r3l::Tape tape;
      int y = tape.dense(tape.leaf(x), tape.param(store, "w"),
                         tape.param(store, "b"));
      int loss = tape.mean(tape.square(tape.tanh_op(y)));
      tape.backward(loss, store);
      r3l::clip_grad_norm(store, 0.5f);
      r3l::adam_step(store, adam);
    }
    return store.checksum();
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}

TEST_CASE("forward ops never mutate their inputs") {
  Pcg32 rng(5);
  Tensor x = random_tensor({2, 3, 6, 6}, rng);
  Tensor k = random_tensor({4, 3, 3, 3}, rng);
  Tensor d = random_tensor({4, 9}, rng);
  Tensor w = random_tensor({2, 9}, rng);
  std::uint64_t cx = x.checksum(), ck = k.checksum(), cd = d.checksum(),
                cw = w.checksum();
  (void)r3l::conv2d_forward(x, k, 1);
  (void)r3l::dense_forward(d, w);
  (void)r3l::relu_forward(d);
  (void)r3l::tanh_forward(d);
  (void)r3l::softmax_rows(d);
  (void)r3l::cosine_rows_forward(d, w);
  CHECK(x.checksum() == cx);
  CHECK(k.checksum() == ck);
  CHECK(d.checksum() == cd);
  CHECK(w.checksum() == cw);
}

TEST_CASE("orthogonal init yields orthonormal rows scaled by gain") {
  Pcg32 rng(17);
  Tensor w = r3l::orthogonal_init<float>({4, 16}, std::sqrt(2.0), rng);
  auto m = w.mat(4, 16);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.row(i).norm() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-4));
    for (int j = i + 1; j < 4; ++j)
      CHECK(std::fabs(m.row(i).dot(m.row(j))) < 1e-4);
  }
}

TEST_CASE("tape min/max route gradients to the selected operand") {
  r3l::ParamStore store;
  store.add("a", Tensor::from({3}, {1, 5, 2}));
  store.add("b", Tensor::from({3}, {2, 3, 2}));
  r3l::Tape tape;
  int a = tape.param(store, "a");
  int b = tape.param(store, "b");
  int loss = tape.sum(tape.max_op(a, b));
  tape.backward(loss, store);
  CHECK(store.grad("a").data[0] == 0.0f);
  CHECK(store.grad("a").data[1] == 1.0f);
  CHECK(store.grad("a").data[2] == 1.0f);  // tie goes to the first operand
  CHECK(store.grad("b").data[0] == 1.0f);
  CHECK(store.grad("b").data[1] == 0.0f);
  CHECK(store.grad("b").data[2] == 0.0f);
}

TEST_CASE("clamp passes gradients only strictly inside the interval") {
  r3l::ParamStore store;
  store.add("r", Tensor::from({3}, {0.5f, 1.1f, 1.3f}));
  r3l::Tape tape;
  int r = tape.param(store, "r");
  int loss = tape.sum(tape.clamp(r, 0.8f, 1.2f));
  tape.backward(loss, store);
  CHECK(store.grad("r").data[0] == 0.0f);
  CHECK(store.grad("r").data[1] == 1.0f);
  CHECK(store.grad("r").data[2] == 0.0f);
}

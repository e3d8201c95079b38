#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "macnet/tensor.hpp"

using namespace macnet;

namespace {

// Scalar-loop oracle for an affine map, written independently of linear().
std::vector<double> affine_oracle(const std::vector<double>& W, const std::vector<double>& b,
                                  const std::vector<double>& x, int m, int n) {
  std::vector<double> y(m);
  for (int i = 0; i < m; ++i) {
    double acc = b[i];
    for (int j = 0; j < n; ++j) acc += W[i * n + j] * x[j];
    y[i] = acc;
  }
  return y;
}

}  // namespace

TEST_CASE("apply_linear identity and hand cases") {
  ParameterStore store(0);
  store.get_or_create("id.W", {2, 2}, [](Rng&, std::vector<double>& v) {
    v = {1, 0, 0, 1};
  });
  store.bias("id.b", 2);
  Tensor x = Tensor::vector({1, 0});
  Tensor y = apply_linear(store, x, "id", 2);
  CHECK(y.values() == std::vector<double>{1, 0});

  store.get_or_create("s.W", {1, 1}, [](Rng&, std::vector<double>& v) { v = {3}; });
  store.get_or_create("s.b", {1}, [](Rng&, std::vector<double>& v) { v = {1}; });
  Tensor y2 = apply_linear(store, Tensor::vector({2}), "s", 1);
  CHECK(y2.item() == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("apply_linear matches scalar-loop oracle on random 4->3") {
  Rng rng(7);
  std::vector<double> W(12), b(3), x(4);
  for (auto& v : W) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  for (auto& v : x) v = rng.uniform(-1, 1);

  ParameterStore store(0);
  store.get_or_create("r.W", {3, 4}, [&](Rng&, std::vector<double>& v) { v = W; });
  store.get_or_create("r.b", {3}, [&](Rng&, std::vector<double>& v) { v = b; });
  Tensor y = apply_linear(store, Tensor::vector(x), "r", 3);

  auto expect = affine_oracle(W, b, x, 3, 4);
  for (int i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("apply_linear rejects shape mismatch and fixes registered shapes") {
  ParameterStore store(0);
  apply_linear(store, Tensor::vector({1, 2, 3}), "p", 2);
  CHECK_THROWS_AS(apply_linear(store, Tensor::vector({1, 2}), "p", 2), DimensionError);
  CHECK_THROWS_AS(store.weight("p.W", 4, 3), DimensionError);
}

TEST_CASE("softmax_masked examples") {
  Tensor s = softmax_masked(Tensor::vector({0, 0}), {true, true});
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));

  Tensor m = softmax_masked(Tensor::vector({5, 5, -100}), {true, true, false});
  CHECK(m.at(0) == doctest::Approx(0.5));
  CHECK(m.at(1) == doctest::Approx(0.5));
  CHECK(m.at(2) == 0.0);

  // Direct exp/sum evaluation.
  Tensor t = softmax_masked(Tensor::vector({1, 2, 3}), {true, true, true});
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(t.at(0) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-10));
  CHECK(t.at(1) == doctest::Approx(std::exp(2.0) / z).epsilon(1e-10));
  CHECK(t.at(2) == doctest::Approx(std::exp(3.0) / z).epsilon(1e-10));

  CHECK_THROWS_AS(softmax_masked(Tensor::vector({1, 2}), {false, false}), UsageError);
}

TEST_CASE("softmax_masked is a distribution over unmasked entries") {
  Rng rng(3);
  for (int it = 0; it < 200; ++it) {
    const int L = 1 + static_cast<int>(rng.next_below(8));
    std::vector<double> logits(L);
    std::vector<bool> mask(L);
    bool any = false;
    for (int i = 0; i < L; ++i) {
      logits[i] = rng.uniform(-1000, 1000);
      mask[i] = rng.next_double() < 0.7;
      any = any || mask[i];
    }
    if (!any) mask[static_cast<size_t>(rng.next_below(L))] = true;
    Tensor p = softmax_masked(Tensor::vector(logits), mask);
    double total = 0.0;
    for (int i = 0; i < L; ++i) {
      CHECK(p.at(i) >= 0.0);
      if (!mask[i]) CHECK(p.at(i) == 0.0);
      total += p.at(i);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == doctest::Approx(0.5));
  Tensor w = weighted_sum(Tensor::vector({1, 0}), Tensor({2, 2}, {3, 4, 9, 9}));
  CHECK(w.values() == std::vector<double>{3, 4});
  CHECK_THROWS_AS(add(Tensor::vector({1}), Tensor::vector({1, 2})), DimensionError);
}

TEST_CASE("tanh gradient matches finite difference at 0.3") {
  ParameterStore store(0);
  store.get_or_create("x", {1}, [](Rng&, std::vector<double>& v) { v = {0.3}; });
  auto fwd = [&] { return tanh_op(store.at("x")); };
  auto report = grad_check(fwd, store, 1e-5, 1e-5);
  CHECK(report.pass);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("backward of sum gives unit gradients") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {3}, [](Rng&, std::vector<double>& v) { v = {5, -1, 2}; });
  {
    Tape tape;
    backward(sum(p));
  }
  CHECK(p.grads() == std::vector<double>{1, 1, 1});
}

TEST_CASE("zero-scaled graph leaves zero gradients") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {2}, [](Rng&, std::vector<double>& v) { v = {1.5, -2}; });
  {
    Tape tape;
    Tensor loss = scale_by(Tensor::scalar(0.0), sum(tanh_op(p)));
    backward(loss);
  }
  CHECK(p.grads() == std::vector<double>{0, 0});
}

TEST_CASE("backward usage errors") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {2}, [](Rng&, std::vector<double>& v) { v = {1, 2}; });
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), UsageError);  // no tape
  {
    Tape tape;
    CHECK_THROWS_AS(backward(p), UsageError);  // non-scalar
    Tensor loss = sum(p);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), UsageError);  // consumed
  }
}

TEST_CASE("gradient linearity across independent subgraphs") {
  auto run = [](bool joint) {
    ParameterStore store(11);
    Tensor& a = store.get_or_create("a", {3}, [](Rng&, std::vector<double>& v) {
      v = {0.2, -0.4, 0.9};
    });
    Tensor& b = store.get_or_create("b", {3}, [](Rng&, std::vector<double>& v) {
      v = {1.0, 0.5, -0.3};
    });
    if (joint) {
      Tape tape;
      backward(add(sum(tanh_op(a)), sum(sigmoid(b))));
    } else {
      {
        Tape tape;
        backward(sum(tanh_op(a)));
      }
      {
        Tape tape;
        backward(sum(sigmoid(b)));
      }
    }
    std::vector<double> out = a.grads();
    out.insert(out.end(), b.grads().begin(), b.grads().end());
    return out;
  };
  auto joint = run(true);
  auto split = run(false);
  REQUIRE(joint.size() == split.size());
  for (size_t i = 0; i < joint.size(); ++i)
    CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-12));
}

TEST_CASE("per-op gradients match finite differences across 100 seeds") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    ParameterStore store(seed);
    const int L = 2 + static_cast<int>(rng.next_below(3));
    const int d = 2 + static_cast<int>(rng.next_below(3));
    store.get_or_create("w", {L}, [&](Rng&, std::vector<double>& v) {
      for (auto& x : v) x = rng.uniform(-1, 1);
    });
    store.get_or_create("rows", {L, d}, [&](Rng&, std::vector<double>& v) {
      for (auto& x : v) x = rng.uniform(-1, 1);
    });
    store.weight("lin.W", d, d);
    store.bias("lin.b", d);
    std::vector<bool> mask(L, true);
    if (L > 1) mask[0] = rng.next_double() < 0.5 ? false : true;

    auto fwd = [&] {
      Tensor attn = softmax_masked(store.at("w"), mask);
      Tensor pooled = weighted_sum(attn, tanh_op(store.at("rows")));
      Tensor h = elu(linear(store.at("lin.W"), store.at("lin.b"), pooled));
      Tensor gate = sigmoid(slice(h, 0, 1));
      Tensor mixed = add(scale_by(gate, h), scale_by(one_minus(gate), pooled));
      return sum(mul(mixed, mixed));
    };
    auto report = grad_check(fwd, store, 1e-4, 1e-4);
    INFO("seed ", seed, " max rel err ", report.max_rel_error);
    CHECK(report.pass);
  }
}

TEST_CASE("finite guard rejects overflow but not magnitude 1e3 inputs") {
  Tensor big = Tensor::vector({1e3, -1e3, 0.0});
  CHECK_NOTHROW(softmax_masked(big, {true, true, true}));
  CHECK_NOTHROW(sigmoid(big));
  CHECK_NOTHROW(tanh_op(big));
  Tensor huge = Tensor::vector({1e308, 1e308});
  CHECK_THROWS_AS(add(huge, huge), NumericError);
}

TEST_CASE("grad_check rejects bad eps and frozen params report zero") {
  ParameterStore store(0);
  store.get_or_create("used", {2}, [](Rng&, std::vector<double>& v) { v = {0.3, -0.2}; });
  store.get_or_create("frozen", {2}, [](Rng&, std::vector<double>& v) { v = {1, 1}; });
  auto fwd = [&] { return sum(tanh_op(store.at("used"))); };
  CHECK_THROWS_AS(grad_check(fwd, store, 1e-2, 1e-4), UsageError);
  auto report = grad_check(fwd, store, 1e-4, 1e-4);
  CHECK(report.pass);
  for (const auto& e : report.per_param) {
    if (e.name == "frozen") CHECK(e.max_rel_error == 0.0);
  }
}

TEST_CASE("grad_check flags a nondeterministic closure") {
  ParameterStore store(0);
  store.get_or_create("p", {1}, [](Rng&, std::vector<double>& v) { v = {0.5}; });
  int calls = 0;
  auto fwd = [&] {
    ++calls;
    return Tensor::scalar(static_cast<double>(calls));
  };
  CHECK_THROWS_AS(grad_check(fwd, store, 1e-4, 1e-4), UsageError);
}

TEST_CASE("adam: zero grads leave parameters unchanged") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {3}, [](Rng&, std::vector<double>& v) { v = {1, 2, 3}; });
  AdamState state;
  adam_step(store, state, 1e-3, 5.0);
  CHECK(p.values() == std::vector<double>{1, 2, 3});
  CHECK(state.t == 1);
}

TEST_CASE("adam: bias-corrected first step moves by about lr") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {1}, [](Rng&, std::vector<double>& v) { v = {0.0}; });
  p.grads()[0] = 1.0;
  AdamState state;
  adam_step(store, state, 1e-3, 0.0);
  // Hand evaluation: mhat = 1, vhat = 1, step = lr / (1 + 1e-8).
  CHECK(p.at(0) == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(p.grads()[0] == 0.0);
}

TEST_CASE("adam: global norm clipping scales gradients") {
  ParameterStore store(0);
  Tensor& p = store.get_or_create("p", {1}, [](Rng&, std::vector<double>& v) { v = {0.0}; });
  p.grads()[0] = 100.0;
  AdamState state;
  const double norm = adam_step(store, state, 1e-3, 5.0);
  CHECK(norm == doctest::Approx(100.0));
  // Effective grad 5.0: mhat = 5, vhat = 25, step = lr * 5 / 5 = lr.
  CHECK(p.at(0) == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam: missing grad is a usage error") {
  ParameterStore store(0);
  store.get_or_create("p", {1}, [](Rng&, std::vector<double>& v) { v = {0.0}; });
  store.at("p").grad = nullptr;
  AdamState state;
  CHECK_THROWS_AS(adam_step(store, state, 1e-3, 5.0), UsageError);
}

TEST_CASE("tape cannot nest and records only under grad mode") {
  Tape outer;
  CHECK_THROWS_AS(Tape{}, UsageError);
  CHECK(Tape::active() == &outer);
}

TEST_CASE("single linear layer grad_check passes tightly") {
  ParameterStore store(42);
  store.weight("l.W", 3, 4);
  store.bias("l.b", 3);
  Rng rng(9);
  std::vector<double> xv(4);
  for (auto& v : xv) v = rng.uniform(-1, 1);
  Tensor x = Tensor::vector(xv);
  auto fwd = [&] { return sum(apply_linear(store, x, "l", 3)); };
  auto report = grad_check(fwd, store, 1e-4, 1e-6);
  CHECK(report.pass);
  CHECK(report.max_rel_error < 1e-6);
}

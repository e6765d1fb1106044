#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hds/rng.hpp"
#include "hds/tape.hpp"
#include "test_helpers.hpp"

using namespace hds;
using hds::test::check_gradients;
using hds::test::near;

TEST_CASE("forward evaluation of basic expressions") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(2.0));
  Var y = t.leaf(Tensor::scalar(3.0));
  CHECK(near((x * y).value()[0], 6.0));

  Var z = t.leaf(Tensor::scalar(0.0));
  CHECK(near(softplus(z).value()[0], std::log(2.0)));

  Var big = t.constant(Tensor({2}, {1000.0, 1000.0}));
  const double lse = logsumexp(big, 0).value()[0];
  CHECK(std::isfinite(lse));
  CHECK(near(lse, 1000.0 + std::log(2.0)));
}

TEST_CASE("backward on scalar compositions") {
  {
    Tape t;
    Var x = t.param("x", Tensor::scalar(3.0));
    t.backward(x * x);
    CHECK(near(t.grad(x)[0], 6.0));
  }
  {
    Tape t;
    Var x = t.param("x", Tensor::scalar(0.0));
    t.backward(tanh(x));
    CHECK(near(t.grad(x)[0], 1.0));
  }
}

TEST_CASE("random composite of exp/log/mul/add/tanh/softplus matches finite differences") {
  Rng rng(71);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Tensor> inputs;
    for (int k = 0; k < 5; ++k) inputs.push_back(Tensor::scalar(0.3 + rng.uniform()));
    auto fn = [](Tape&, const std::vector<Var>& v) {
      Var a = tanh(v[0] * v[1]) + softplus(v[2]);
      Var b = exp(v[3] * 0.5) * log(v[4] + 1.5);
      return sum(a * b + v[0]);
    };
    auto res = check_gradients(fn, inputs, 1e-5, 1e-5, 1e-7);
    CAPTURE(res.detail);
    CHECK(res.ok);
  }
}

TEST_CASE("stop_gradient freezes its subgraph") {
  {
    Tape t;
    Var x = t.param("x", Tensor::scalar(3.0));
    t.backward(x * stop_gradient(x));
    CHECK(near(t.grad(x)[0], 3.0));
  }
  {
    Tape t;
    Var x = t.param("x", Tensor::scalar(3.0));
    t.backward(stop_gradient(x));
    CHECK(near(t.grad(x)[0], 0.0));
  }
  // d/dtheta [ stop(w)^2 * log w ] must equal w^2 * dlogw/dtheta; with
  // w = exp(2 theta) the symbolic value is 2 w^2.
  {
    Tape t;
    Var theta = t.param("theta", Tensor::scalar(0.37));
    Var w = exp(theta * 2.0);
    Var frozen = stop_gradient(w);
    t.backward(frozen * frozen * log(w));
    const double w0 = std::exp(2.0 * 0.37);
    CHECK(hds::test::near_rel(t.grad(theta)[0], 2.0 * w0 * w0, 1e-12));
  }
}

TEST_CASE("every primitive matches central finite differences at random points") {
  Rng rng(1234);
  auto positive = [&](Shape s) {
    Tensor t = rng.uniform_tensor(s, 0.2, 2.0);
    return t;
  };
  auto anywhere = [&](Shape s) { return rng.normal_tensor(s); };

  struct Case {
    const char* name;
    std::vector<Tensor> inputs;
    hds::test::GraphFn fn;
  };
  std::vector<Case> cases;

  cases.push_back({"add", {anywhere({3, 4}), anywhere({3, 4})},
                   [](Tape&, const std::vector<Var>& v) { return sum(v[0] + v[1]); }});
  cases.push_back({"add broadcast", {anywhere({3, 4}), anywhere({4})},
                   [](Tape&, const std::vector<Var>& v) { return sum(mul_const(v[0] + v[1], 0.7)); }});
  cases.push_back({"sub", {anywhere({5}), anywhere({1})},
                   [](Tape&, const std::vector<Var>& v) { return sum((v[0] - v[1]) * v[0]); }});
  cases.push_back({"mul broadcast", {anywhere({2, 3, 2}), anywhere({3, 1})},
                   [](Tape&, const std::vector<Var>& v) { return sum(v[0] * v[1]); }});
  cases.push_back({"div", {anywhere({6}), positive({6})},
                   [](Tape&, const std::vector<Var>& v) { return sum(v[0] / v[1]); }});
  cases.push_back({"exp", {anywhere({7})}, [](Tape&, const std::vector<Var>& v) { return sum(exp(v[0])); }});
  cases.push_back({"log", {positive({7})}, [](Tape&, const std::vector<Var>& v) { return sum(log(v[0])); }});
  cases.push_back({"tanh", {anywhere({7})}, [](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0])); }});
  cases.push_back({"relu off-kink", {positive({7})},
                   [](Tape&, const std::vector<Var>& v) { return sum(relu(v[0] - 0.1)); }});
  cases.push_back({"softplus", {anywhere({7})},
                   [](Tape&, const std::vector<Var>& v) { return sum(softplus(v[0])); }});
  cases.push_back({"sigmoid", {anywhere({7})},
                   [](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0])); }});
  cases.push_back({"pow_const", {positive({6})},
                   [](Tape&, const std::vector<Var>& v) { return sum(pow_const(v[0], 1.7)); }});
  cases.push_back({"pow_pos", {positive({6}), positive({6})},
                   [](Tape&, const std::vector<Var>& v) { return sum(pow_pos(v[0], v[1])); }});
  cases.push_back({"clamp_min off-kink", {positive({6})},
                   [](Tape&, const std::vector<Var>& v) { return sum(clamp_min(v[0], 0.05)); }});
  cases.push_back({"mean", {anywhere({3, 5})}, [](Tape&, const std::vector<Var>& v) { return mean(v[0]); }});
  cases.push_back({"sum_axis", {anywhere({3, 5})},
                   [](Tape&, const std::vector<Var>& v) { return sum(pow_const(sum_axis(v[0], 1), 2.0)); }});
  cases.push_back({"mean_axis keepdim", {anywhere({3, 5})},
                   [](Tape&, const std::vector<Var>& v) { return sum(v[0] * mean_axis(v[0], 0, true)); }});
  cases.push_back({"logsumexp", {anywhere({4, 6})},
                   [](Tape&, const std::vector<Var>& v) { return sum(logsumexp(v[0], 1)); }});
  cases.push_back({"matmul", {anywhere({3, 4}), anywhere({4, 2})},
                   [](Tape&, const std::vector<Var>& v) { return sum(tanh(matmul(v[0], v[1]))); }});
  cases.push_back({"conv1d", {anywhere({2, 3, 9}), anywhere({4, 3, 3})},
                   [](Tape&, const std::vector<Var>& v) { return sum(tanh(conv1d(v[0], v[1], 2))); }});
  cases.push_back({"avg_pool1d", {anywhere({2, 3, 7})},
                   [](Tape&, const std::vector<Var>& v) { return sum(pow_const(avg_pool1d(v[0], 2), 2.0)); }});
  cases.push_back({"concat+slice", {anywhere({3, 2}), anywhere({3, 3})},
                   [](Tape&, const std::vector<Var>& v) {
                     Var c = concat({v[0], v[1]}, 1);
                     return sum(slice(c, 1, 1, 3) * slice(c, 1, 0, 3));
                   }});
  cases.push_back({"reshape", {anywhere({2, 6})},
                   [](Tape&, const std::vector<Var>& v) {
                     Var r = reshape(v[0], {3, 4});
                     return sum(r * r);
                   }});
  cases.push_back({"repeat_rows", {anywhere({3, 2})},
                   [](Tape&, const std::vector<Var>& v) { return sum(exp(repeat_rows(v[0], 4) * 0.3)); }});
  cases.push_back({"normal_logpdf", {anywhere({5}), anywhere({5}), anywhere({5})},
                   [](Tape&, const std::vector<Var>& v) { return sum(normal_logpdf(v[0], v[1], v[2])); }});

  for (auto& c : cases) {
    CAPTURE(c.name);
    auto res = check_gradients(c.fn, c.inputs, 1e-5, 1e-5, 1e-7, 100, &rng);
    CAPTURE(res.detail);
    CHECK(res.ok);
  }
}

TEST_CASE("logsumexp is exact under constant shift") {
  // exactly representable inputs and shift: bitwise equality
  {
    Tape t;
    Var a = t.constant(Tensor({3}, {1.0, 3.0, -2.0}));
    Var b = t.constant(Tensor({3}, {1.0 + 1024.0, 3.0 + 1024.0, -2.0 + 1024.0}));
    CHECK(logsumexp(a, 0).value()[0] + 1024.0 == logsumexp(b, 0).value()[0]);
  }
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = rng.normal_tensor({8});
    const double c = rng.normal() * 50.0;
    Tensor xc = x;
    for (std::size_t i = 0; i < xc.size(); ++i) xc[i] += c;
    Tape t;
    const double l0 = logsumexp(t.constant(x), 0).value()[0];
    const double l1 = logsumexp(t.constant(xc), 0).value()[0];
    CHECK(hds::test::near_rel(l1, l0 + c, 1e-13));
  }
}

TEST_CASE("backward is deterministic and resets accumulators between calls") {
  auto run = [](std::vector<double>& out) {
    Rng rng(99);
    Tape t;
    Var w = t.param("w", rng.normal_tensor({4, 3}));
    Var x = t.constant(rng.normal_tensor({5, 4}));
    Var y = sum(tanh(matmul(x, w)));
    t.backward(y);
    // second call on another root must not inherit the first accumulation
    t.backward(mean(exp(matmul(x, w))));
    Tensor g = t.grad(w);
    out.assign(g.data(), g.data() + g.size());
  };
  std::vector<double> a, b;
  run(a);
  run(b);
  CHECK(a == b);

  // grads after the second backward equal a fresh single-backward run
  Rng rng(99);
  Tape t;
  Var w = t.param("w", rng.normal_tensor({4, 3}));
  Var x = t.constant(rng.normal_tensor({5, 4}));
  t.backward(mean(exp(matmul(x, w))));
  Tensor g = t.grad(w);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == a[i]);
}

TEST_CASE("gradient accumulates across fan-out") {
  Tape t;
  Var x = t.param("x", Tensor::scalar(1.5));
  Var y = x * x + x * 3.0 + exp(x) * 0.0;  // fan-out of x into three consumers
  t.backward(y);
  CHECK(near(t.grad(x)[0], 2.0 * 1.5 + 3.0, 1e-12));
}

TEST_CASE("shape errors name the primitive and shapes") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({4}));
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), Error);
  CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("matmul"), Error);
  Var y = t.constant(Tensor({2}));
  CHECK_THROWS_AS(t.backward(y), Error);  // non-scalar root
  Var short_sig = t.constant(Tensor({1, 2, 3}));
  Var filt = t.constant(Tensor({5, 2, 4}));
  CHECK_THROWS_WITH_AS(conv1d(short_sig, filt, 1), doctest::Contains("conv1d"), Error);
}

TEST_CASE("pow_pos is zero-valued with zero gradients at a zero base") {
  Tape t;
  Var base = t.param("b", Tensor({3}, {0.0, 0.5, 2.0}));
  Var expo = t.param("n", Tensor({3}, {1.3, 1.3, 1.3}));
  Var p = pow_pos(base, expo);
  CHECK(p.value()[0] == 0.0);
  Var y = sum(p);
  t.backward(y);
  CHECK(t.grad(base)[0] == 0.0);
  CHECK(t.grad(expo)[0] == 0.0);
  CHECK(t.grad(base)[2] > 0.0);
}

TEST_CASE("parameter registry lookups") {
  Tape t;
  Var x = t.param("weights.w1", Tensor::scalar(2.0));
  CHECK(t.param_var("weights.w1").id == x.id);
  CHECK_THROWS_AS(t.param_var("missing"), Error);
  CHECK_THROWS_AS(t.param("weights.w1", Tensor::scalar(0.0)), Error);
}

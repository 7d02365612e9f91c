#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ckd/graph.hpp"
#include "ckd/optimizer.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"
#include "doctest.h"
#include "test_util.hpp"

using ckd::ParameterStore;
using ckd::Rng;
using ckd::Tensor;
using ckd::ValueGraph;
using ckd::testutil::random_tensor;
using ckd::testutil::weighted_sum;

namespace {

std::shared_ptr<ParameterStore<double>> store() {
  return std::make_shared<ParameterStore<double>>();
}

}  // namespace

TEST_CASE("evaluate: elementwise add of two vectors") {
  ValueGraph<double> g;
  int x = g.input("x", {2});
  int y = g.input("y", {2});
  g.mark_output(g.add(x, y), "z");
  auto out = g.evaluate({{"x", Tensor<double>({2}, {1, 2})},
                         {"y", Tensor<double>({2}, {3, 4})}});
  CHECK(out.at("z")[0] == 4.0);
  CHECK(out.at("z")[1] == 6.0);
}

TEST_CASE("evaluate: softmax of a constant row is uniform") {
  ValueGraph<double> g;
  int x = g.constant(Tensor<double>({3}, {0, 0, 0}));
  g.mark_output(g.softmax_row(x), "p");
  auto out = g.evaluate();
  for (int i = 0; i < 3; ++i) CHECK(out.at("p")[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("evaluate: multiplying by the identity returns the operand") {
  ValueGraph<double> g;
  int eye = g.constant(Tensor<double>::matrix(2, 2, {1, 0, 0, 1}));
  int a = g.input("a", {2, 2});
  g.mark_output(g.matmul(eye, a), "out");
  Tensor<double> A = Tensor<double>::matrix(2, 2, {3.5, -1, 2, 0.25});
  auto out = g.evaluate({{"a", A}});
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.at("out")[i] == A[i]);
}

TEST_CASE("evaluate is referentially transparent") {
  auto ps = store();
  ps->add("w", Tensor<double>::matrix(3, 3, {0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.8, 0.9}));
  ValueGraph<double> g(ps);
  int x = g.input("x", {2, 3});
  int h = g.softmax_row(g.layer_norm(g.matmul(x, g.param("w"))));
  g.mark_output(h, "h");
  Tensor<double> xv = Tensor<double>::matrix(2, 3, {1, 2, 3, -1, 0, 1});
  auto a = g.evaluate({{"x", xv}});
  auto b = g.evaluate({{"x", xv}});
  for (std::size_t i = 0; i < a.at("h").numel(); ++i)
    CHECK(a.at("h")[i] == b.at("h")[i]);  // bitwise
}

TEST_CASE("gradients: square function") {
  auto ps = store();
  ps->add("x", Tensor<double>::scalar(3.0));
  ValueGraph<double> g(ps);
  int x = g.param("x");
  int f = g.mul(x, x);
  auto grads = g.gradients(f);
  CHECK(grads.at("x")[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradients: sum of softmax is constant, so its gradient vanishes") {
  auto ps = store();
  ps->add("x", Tensor<double>({4}, {0.3, -1.2, 2.0, 0.7}));
  ValueGraph<double> g(ps);
  int f = g.sum(g.softmax_row(g.param("x")));
  auto grads = g.gradients(f);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::abs(grads.at("x")[i]) < 1e-14);
}

TEST_CASE("gradients: sum of matmul with an all-ones left vector") {
  auto ps = store();
  ps->add("w", Tensor<double>::matrix(2, 3, {0.5, 1, -2, 3, 0.25, 4}));
  ValueGraph<double> g(ps);
  int a = g.constant(Tensor<double>::row({1, 1}));
  int f = g.sum(g.matmul(a, g.param("w")));
  auto grads = g.gradients(f);
  for (std::size_t i = 0; i < 6; ++i)
    CHECK(grads.at("w")[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradients: detached parameter gets a zero gradient") {
  auto ps = store();
  ps->add("used", Tensor<double>::scalar(2.0));
  ps->add("unused", Tensor<double>({3}, {1, 2, 3}));
  ValueGraph<double> g(ps);
  int f = g.mul(g.param("used"), g.param("used"));
  auto grads = g.gradients(f);
  CHECK(grads.count("unused") == 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(grads.at("unused")[i] == 0.0);
}

TEST_CASE("gradients: non-scalar output is rejected") {
  auto ps = store();
  ps->add("x", Tensor<double>({2}, {1, 2}));
  ValueGraph<double> g(ps);
  int x = g.param("x");
  CHECK_THROWS_AS(g.gradients(x), std::runtime_error);
}

TEST_CASE("grad_check: square function is tight") {
  auto ps = store();
  ps->add("x", Tensor<double>::scalar(3.0));
  ValueGraph<double> g(ps);
  int x = g.param("x");
  int f = g.mul(x, x);
  CHECK(g.grad_check(f, 1e-5) < 1e-6);
}

TEST_CASE("grad_check: embedding gather with a dot-product objective") {
  Rng rng(2024);
  auto ps = store();
  ps->add("table", random_tensor(rng, {6, 5}));
  ValueGraph<double> g(ps);
  int u = g.gather(g.param("table"), {0, 3});
  int v = g.gather(g.param("table"), {2, 3});  // shared row exercises scatter-add
  int f = g.sum(g.mul(u, v));
  CHECK(g.grad_check(f, 1e-5) < 1e-5);
}

TEST_CASE("grad_check: two chained masked attention blocks stay under 1e-4") {
  Rng rng(7);
  auto ps = store();
  const std::size_t L = 4, d = 6;
  ps->add("x", random_tensor(rng, {L, d}, -0.5, 0.5));
  for (int layer = 0; layer < 2; ++layer) {
    const std::string p = "l" + std::to_string(layer) + ".";
    ps->add(p + "wq", random_tensor(rng, {d, d}, -0.5, 0.5));
    ps->add(p + "wk", random_tensor(rng, {d, d}, -0.5, 0.5));
    ps->add(p + "wv", random_tensor(rng, {d, d}, -0.5, 0.5));
  }
  ValueGraph<double> g(ps);
  int h = g.param("x");
  for (int layer = 0; layer < 2; ++layer) {
    const std::string p = "l" + std::to_string(layer) + ".";
    int q = g.matmul(h, g.param(p + "wq"));
    int k = g.matmul(h, g.param(p + "wk"));
    int v = g.matmul(h, g.param(p + "wv"));
    h = g.layer_norm(g.add(h, g.masked_attention(q, k, v)));
  }
  int f = weighted_sum(g, h, rng);
  CHECK(g.grad_check(f, 1e-5) < 1e-4);
}

TEST_CASE("grad_check: every op in the closed set, several seeds each") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 101);
    auto run = [&](auto&& build) {
      auto ps = store();
      ValueGraph<double> g(ps);
      int node = build(g, *ps);
      int f = weighted_sum(g, node, rng);
      CHECK(g.grad_check(f, 1e-5) < 1e-4);
    };

    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("a", random_tensor(rng, {3, 4}));
      ps.add("b", random_tensor(rng, {3, 4}));
      return g.add(g.param("a"), g.param("b"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("a", random_tensor(rng, {3, 4}));
      ps.add("b", random_tensor(rng, {3, 4}));
      return g.mul(g.param("a"), g.param("b"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("a", random_tensor(rng, {2, 5}));
      return g.affine(g.param("a"), 1.7, -0.3);
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("a", random_tensor(rng, {3, 4}));
      ps.add("b", random_tensor(rng, {4, 2}));
      return g.matmul(g.param("a"), g.param("b"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {3, 4}));
      ps.add("r", random_tensor(rng, {4}));
      return g.add_row(g.param("x"), g.param("r"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {3, 4}));
      ps.add("r", random_tensor(rng, {4}));
      return g.mul_row(g.param("x"), g.param("r"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("t", random_tensor(rng, {5, 3}));
      return g.gather(g.param("t"), {4, 0, 4, 2});
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {3, 5}));
      return g.softmax_row(g.param("x"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {3, 6}));
      return g.layer_norm(g.param("x"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("q", random_tensor(rng, {4, 3}, -0.5, 0.5));
      ps.add("k", random_tensor(rng, {4, 3}, -0.5, 0.5));
      ps.add("v", random_tensor(rng, {4, 5}, -0.5, 0.5));
      return g.masked_attention(g.param("q"), g.param("k"), g.param("v"));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {2, 4}));
      // strictly positive argument: x^2 + 1/2
      return g.log(g.affine(g.mul(g.param("x"), g.param("x")), 1.0, 0.5));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {2, 4}));
      return g.exp(g.affine(g.param("x"), 0.5, 0.0));
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {7}));
      // reshape + stack keep the plumbing honest
      return g.reshape(g.param("x"), {1, 7});
    });
    run([&](ValueGraph<double>& g, ParameterStore<double>& ps) {
      ps.add("x", random_tensor(rng, {4}));
      ps.add("y", random_tensor(rng, {4}));
      return g.stack_rows({g.param("x"), g.param("y")});
    });
    // sum and mean reduce to scalars already; check them directly.
    {
      auto ps = store();
      ps->add("x", random_tensor(rng, {3, 3}));
      ValueGraph<double> g(ps);
      CHECK(g.grad_check(g.sum(g.param("x")), 1e-5) < 1e-4);
    }
    {
      auto ps = store();
      ps->add("x", random_tensor(rng, {3, 3}));
      ValueGraph<double> g(ps);
      CHECK(g.grad_check(g.mean(g.param("x")), 1e-5) < 1e-4);
    }
    // dropout: eval mode is identity, train mode uses the recorded mask.
    {
      auto ps = store();
      ps->add("x", random_tensor(rng, {3, 4}));
      ValueGraph<double> g(ps);
      Rng drop(seed);
      int node = g.dropout(g.param("x"), 0.5, drop, true);
      int f = weighted_sum(g, node, rng);
      CHECK(g.grad_check(f, 1e-5) < 1e-4);
    }
    {
      auto ps = store();
      ps->add("x", random_tensor(rng, {3, 4}));
      ValueGraph<double> g(ps);
      Rng drop(seed);
      int node = g.dropout(g.param("x"), 0.5, drop, false);
      int f = weighted_sum(g, node, rng);
      CHECK(g.grad_check(f, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("dropout: eval mode is the identity, train mode scales survivors") {
  auto ps = store();
  ps->add("x", Tensor<double>({1, 100}, std::vector<double>(100, 1.0)));
  ValueGraph<double> g(ps);
  Rng drop(12);
  int train_node = g.dropout(g.param("x"), 0.25, drop, true);
  int eval_node = g.dropout(g.param("x"), 0.25, drop, false);
  g.mark_output(train_node, "train");
  g.mark_output(eval_node, "eval");
  auto out = g.evaluate();
  int zeros = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    double v = out.at("train")[i];
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.75).epsilon(1e-12)));
    zeros += v == 0.0;
    CHECK(out.at("eval")[i] == 1.0);
  }
  CHECK(zeros > 5);   // ~25 expected
  CHECK(zeros < 50);
}

TEST_CASE("gradient of independent subgraphs is blockwise independent") {
  Rng rng(31);
  auto ps = store();
  ps->add("a", random_tensor(rng, {4}));
  ps->add("b", random_tensor(rng, {4}));

  ValueGraph<double> joint(ps);
  int fa = joint.sum(joint.mul(joint.param("a"), joint.param("a")));
  int fb = joint.sum(joint.exp(joint.param("b")));
  auto grads = joint.gradients(joint.add(fa, fb));

  ValueGraph<double> only_a(ps);
  auto ga = only_a.gradients(
      only_a.sum(only_a.mul(only_a.param("a"), only_a.param("a"))));
  ValueGraph<double> only_b(ps);
  auto gb = only_b.gradients(only_b.sum(only_b.exp(only_b.param("b"))));

  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(grads.at("a")[i] == doctest::Approx(ga.at("a")[i]).epsilon(1e-14));
    CHECK(grads.at("b")[i] == doctest::Approx(gb.at("b")[i]).epsilon(1e-14));
  }
}

TEST_CASE("shape errors name both offending nodes") {
  ValueGraph<double> g;
  int a = g.input("a", {2, 3});
  int b = g.input("b", {2, 2});
  CHECK_THROWS_WITH_AS(g.add(a, b),
                       doctest::Contains("add: shape mismatch"),
                       std::runtime_error);
  try {
    g.matmul(a, b);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("node 0") != std::string::npos);
    CHECK(msg.find("node 1") != std::string::npos);
    CHECK(msg.find("'a'") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
  }
}

TEST_CASE("evaluate reports missing bindings and non-finite results by op") {
  ValueGraph<double> g;
  int x = g.input("x", {2});
  g.mark_output(g.log(x), "y");
  CHECK_THROWS_WITH(g.evaluate(), "evaluate: no binding for input 'x'");
  try {
    g.evaluate({{"x", Tensor<double>({2}, {-1.0, 1.0})}});
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
    CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
  }
}

TEST_CASE("gather validates indices at build time") {
  ValueGraph<double> g;
  int t = g.input("t", {3, 2});
  CHECK_THROWS_AS(g.gather(t, {3}), std::runtime_error);
  CHECK_THROWS_AS(g.gather(t, {-1}), std::runtime_error);
  CHECK_THROWS_AS(g.gather(t, {}), std::runtime_error);
}

TEST_CASE("masked attention ignores future positions") {
  // Row i of the output must not change when later rows of the inputs do.
  Rng rng(55);
  Tensor<double> q = random_tensor(rng, {4, 3});
  Tensor<double> k = random_tensor(rng, {4, 3});
  Tensor<double> v = random_tensor(rng, {4, 2});

  ValueGraph<double> g;
  int qa = g.input("q", {4, 3});
  int ka = g.input("k", {4, 3});
  int va = g.input("v", {4, 2});
  g.mark_output(g.masked_attention(qa, ka, va), "o");
  auto before = g.evaluate({{"q", q}, {"k", k}, {"v", v}});

  Tensor<double> k2 = k, v2 = v;
  for (std::size_t j = 0; j < 3; ++j) k2.at(3, j) += 10.0;
  for (std::size_t j = 0; j < 2; ++j) v2.at(3, j) -= 5.0;
  auto after = g.evaluate({{"q", q}, {"k", k2}, {"v", v2}});

  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(before.at("o").at(i, j) == after.at("o").at(i, j));
  bool last_row_changed = false;
  for (std::size_t j = 0; j < 2; ++j)
    last_row_changed |= before.at("o").at(3, j) != after.at("o").at(3, j);
  CHECK(last_row_changed);
}

TEST_CASE("adam-style training loop reduces a quadratic objective") {
  // Smoke test that gradients drive optimization in the right direction.
  auto ps = store();
  ps->add("w", Tensor<double>({3}, {5.0, -4.0, 2.0}));
  ckd::AdamOptimizer<double> opt(ps, 0.05, 0.0);
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 200; ++it) {
    ValueGraph<double> g(ps);
    int w = g.param("w");
    int f = g.sum(g.mul(w, w));
    auto grads = g.gradients(f);
    double val = g.value_of(f)[0];
    if (it == 0) first = val;
    last = val;
    opt.step(grads);
  }
  CHECK(first > 40.0);
  CHECK(last < 0.5);
}

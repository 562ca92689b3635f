#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "fewshot/grad_check.hpp"
#include "fewshot/grad_suite.hpp"
#include "fewshot/optimizer.hpp"
#include "fewshot/tape.hpp"
#include "test_util.hpp"

using namespace fewshot;
using doctest::Approx;

namespace {

void check_values(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t[i] == Approx(expected[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape;
  const Tensor b({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  check_values(tape.matmul(eye, b), {1, 2, 3, 4, 5, 6});

  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor ones({2, 1}, {1, 1});
  const Tensor r = tape.matmul(a, ones);
  CHECK(r.shape() == Shape{2, 1});
  check_values(r, {3, 7});

  const Tensor z = tape.matmul(Tensor::zeros({2, 3}), Tensor({3, 1}, {4, 5, 6}));
  check_values(z, {0, 0});
}

TEST_CASE("matmul shape errors name both shapes") {
  Tape tape;
  try {
    tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
  }
}

TEST_CASE("l2_normalize examples") {
  Tape tape;
  check_values(tape.l2_normalize(Tensor({2}, {3, 4})), {0.6, 0.8});
  check_values(tape.l2_normalize(Tensor({3}, {1, 0, 0})), {1, 0, 0});
  check_values(tape.l2_normalize(Tensor({3}, {0, 0, 0})), {0, 0, 0});
}

TEST_CASE("l2_normalize gives unit rows") {
  Rng rng(3);
  Tape tape;
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor x = testing::random_tensor(rng, {4, 6}, false, std::pow(10.0, rep % 7 - 3));
    const Tensor y = tape.l2_normalize(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double ss = 0.0;
      for (std::size_t j = 0; j < 6; ++j) ss += y[r * 6 + j] * y[r * 6 + j];
      CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax examples") {
  Tape tape;
  check_values(tape.softmax(Tensor({4}, {2, 2, 2, 2})), {0.25, 0.25, 0.25, 0.25});
  check_values(tape.softmax(Tensor({1}, {-3})), {1.0});
  check_values(tape.softmax(Tensor({2}, {0, std::log(3.0)})), {0.25, 0.75});
}

TEST_CASE("softmax normalizes and ignores a constant shift") {
  Rng rng(11);
  Tape tape;
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor x = testing::random_tensor(rng, {3, 5}, false, 5.0);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (double& v : shifted) v += 123.5;
    const Tensor p = tape.softmax(x);
    const Tensor q = tape.softmax(Tensor({3, 5}, shifted));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        total += p[r * 5 + j];
        CHECK(p[r * 5 + j] >= 0.0);
        CHECK(std::abs(p[r * 5 + j] - q[r * 5 + j]) < 1e-6);
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("cross_entropy examples") {
  Tape tape;
  const std::vector<std::size_t> y0 = {0}, y1 = {1};
  CHECK(tape.cross_entropy(Tensor({1, 3}, {1, 0, 0}), y0).item() == Approx(0.0).epsilon(1e-11));
  CHECK(tape.cross_entropy(Tensor({1, 4}, {0.25, 0.25, 0.25, 0.25}), y1).item() ==
        Approx(std::log(4.0)));
  CHECK(tape.cross_entropy(Tensor({1, 2}, {0.25, 0.75}), y1).item() ==
        Approx(-std::log(0.75)).epsilon(1e-10));
  CHECK(tape.cross_entropy(Tensor({1, 2}, {0.25, 0.75}), y1).item() == Approx(0.28768).epsilon(1e-5));
  const std::vector<std::size_t> bad = {2};
  CHECK_THROWS(tape.cross_entropy(Tensor({1, 2}, {0.5, 0.5}), bad));
}

TEST_CASE("elementwise examples") {
  Tape tape;
  check_values(tape.hadamard(Tensor({3}, {1, 2, 3}), Tensor({3}, {2, 0, 1})), {2, 0, 3});
  check_values(tape.relu(Tensor({3}, {-1, 0, 2})), {0, 0, 2});
  CHECK_THROWS_AS(tape.hadamard(Tensor({3}, {1, 2, 3}), Tensor({2}, {1, 2})), ShapeError);
  CHECK_THROWS_AS(tape.add(Tensor({3}, {1, 2, 3}), Tensor({1, 3}, {1, 2, 3})), ShapeError);
  check_values(tape.mean_rows(Tensor({2, 2}, {1, 2, 3, 6})), {2, 4});
}

TEST_CASE("dropout is the identity when not training") {
  Rng rng(5);
  Tape tape;
  const Tensor x = testing::random_tensor(rng, {4, 8});
  const Tensor y = tape.dropout(x, 0.5, rng, false);
  REQUIRE(y.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("dropout zeroes or rescales every element") {
  Rng rng(5);
  Tape tape;
  const Tensor x = Tensor({2000}, std::vector<double>(2000, 1.0));
  const Tensor y = tape.dropout(x, 0.25, rng, true);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK((y[i] == 0.0 || y[i] == Approx(1.0 / 0.75)));
    kept += y[i] != 0.0;
  }
  CHECK(kept > 1400);
  CHECK(kept < 1600);
}

TEST_CASE("backward examples") {
  SUBCASE("sum gives ones") {
    Tensor w({3}, {0.5, -2, 7}, true);
    Tape tape;
    tape.backward(tape.sum(w));
    check_values(Tensor({3}, {w.grad().begin(), w.grad().end()}), {1, 1, 1});
  }
  SUBCASE("half squared norm gives w") {
    Tensor w({3}, {0.5, -2, 7}, true);
    Tape tape;
    tape.backward(tape.scale(tape.sum(tape.hadamard(w, w)), 0.5));
    check_values(Tensor({3}, {w.grad().begin(), w.grad().end()}), {0.5, -2, 7});
  }
  SUBCASE("gradients accumulate until cleared") {
    Tensor w({2}, {1, 2}, true);
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(tape.sum(w));
    }
    CHECK(w.grad()[0] == 2.0);
    w.clear_grad();
    CHECK_FALSE(w.has_grad());
  }
  SUBCASE("unused trainable leaves get zero gradients") {
    Tensor used({2}, {1, 2}, true), unused({2}, {3, 4}, true);
    Tape tape;
    const Tensor mixed = tape.add(used, tape.scale(unused, 0.0));
    tape.backward(tape.sum(tape.relu(tape.scale(mixed, -1.0))));
    REQUIRE(used.has_grad());
    REQUIRE(unused.has_grad());
    CHECK(unused.grad()[0] == 0.0);
  }
}

TEST_CASE("backward rejects bad losses") {
  Tensor w({2}, {1, 2}, true);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(tape.scale(w, 2.0)), ShapeError);
  Tape empty;
  CHECK_THROWS(empty.backward(Tensor::scalar(1.0)));
  Tape other;
  const Tensor foreign = other.sum(w);
  CHECK_THROWS(tape.backward(foreign));
}

TEST_CASE("finite_diff_grad examples") {
  const Tensor x({3}, {0.3, -1, 2});
  const Tensor g1 = finite_diff_grad(
      [](const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }, x,
      1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g1[i] == Approx(1.0).epsilon(1e-9));

  const Tensor g2 = finite_diff_grad(
      [](const Tensor& t) { return t[0] * t[0] + t[1] * t[1]; }, Tensor({2}, {1, 2}), 1e-5);
  CHECK(g2[0] == Approx(2.0).epsilon(1e-8));
  CHECK(g2[1] == Approx(4.0).epsilon(1e-8));

  const Tensor g3 = finite_diff_grad([](const Tensor&) { return 4.0; }, x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g3[i] == 0.0);

  CHECK_THROWS(finite_diff_grad([](const Tensor&) { return 0.0; }, x, 0.0));
}

TEST_CASE("every op passes the finite-difference suite") {
  GradSuiteOptions options;
  options.seed = 1;
  const auto entries = run_gradient_suite(options);
  std::vector<std::string> names;
  for (const auto& e : entries) {
    INFO(e.name << " max rel error " << e.max_rel_error);
    CHECK(e.passed);
    CHECK(e.instances >= 20);
    names.push_back(e.name);
  }
  for (std::string_view op : Tape::op_names()) {
    CHECK(std::find(names.begin(), names.end(), std::string(op)) != names.end());
  }
  CHECK(std::find(names.begin(), names.end(), "episode_loss") != names.end());
}

TEST_CASE("a corrupted adjoint is caught") {
  for (std::string_view op : {"softmax", "l2_normalize", "matmul_nt"}) {
    GradSuiteOptions options;
    options.instances = 3;
    options.fault_op = std::string(op);
    const auto entries = run_gradient_suite(options);
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [&](const GradCheckEntry& e) { return e.name == op; });
    REQUIRE(it != entries.end());
    CHECK_FALSE(it->passed);
  }
}

TEST_CASE("sgd examples") {
  SUBCASE("lr 0 leaves params alone") {
    Tensor p({2}, {1.5, -2}, true);
    p.zero_grad();
    p.mutable_grad()[0] = 3.0;
    SgdOptimizer opt({p}, {0.0, 0.9, 5e-4});
    opt.step();
    CHECK(p[0] == 1.5);
    CHECK(p[1] == -2.0);
    CHECK_FALSE(p.has_grad());
  }
  SUBCASE("plain step") {
    Tensor p({1}, {1.0}, true);
    p.zero_grad();
    p.mutable_grad()[0] = 0.5;
    SgdOptimizer opt({p}, {0.1, 0.0, 0.0});
    opt.step();
    CHECK(p[0] == Approx(0.95).epsilon(1e-15));
  }
  SUBCASE("momentum grows the second update") {
    Tensor p({1}, {1.0}, true);
    SgdOptimizer opt({p}, {0.1, 0.9, 0.0});
    double before = p[0];
    std::vector<double> deltas;
    for (int i = 0; i < 2; ++i) {
      p.zero_grad();
      p.mutable_grad()[0] = 0.5;
      opt.step();
      deltas.push_back(std::abs(p[0] - before));
      before = p[0];
    }
    CHECK(deltas[1] > deltas[0]);
  }
  SUBCASE("missing gradient is an error") {
    Tensor p({1}, {1.0}, true);
    SgdOptimizer opt({p}, {});
    CHECK_THROWS_AS(opt.step(), std::logic_error);
  }
}

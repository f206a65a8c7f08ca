// Copyright 2026 AspeRa Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "aspera/gradcheck.hpp"
#include "aspera/rng.hpp"
#include "aspera/tape.hpp"

using namespace aspera;

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  Var s = t.softmax(t.constant(Tensor::vector({0, 0, 0})));
  for (int i = 0; i < 3; ++i)
    REQUIRE(t.value(s)[i] == Catch::Approx(1.0 / 3).margin(1e-15));
}

TEST_CASE("softmax matches the scalar exp oracle") {
  Tape t;
  Var s = t.softmax(t.constant(Tensor::vector({1, 2, 3})));
  // Straight-line oracle: e^x / sum e^x.
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    REQUIRE(t.value(s)[i] == Catch::Approx(std::exp(i + 1.0) / z).epsilon(1e-14));
  REQUIRE(t.value(s)[0] == Catch::Approx(0.09003057).margin(1e-8));
  REQUIRE(t.value(s)[1] == Catch::Approx(0.24472847).margin(1e-8));
  REQUIRE(t.value(s)[2] == Catch::Approx(0.66524096).margin(1e-8));
}

TEST_CASE("masked softmax puts all mass on the single unmasked entry") {
  Tape t;
  Var s = t.softmax(t.constant(Tensor::vector({5, 9})), {1, 0});
  REQUIRE(t.value(s)[0] == 1.0);
  REQUIRE(t.value(s)[1] == 0.0);
}

TEST_CASE("masked softmax renormalizes over unmasked positions") {
  Tape t;
  Var s = t.softmax(t.constant(Tensor::vector({1, 100, 2, 3})), {1, 0, 1, 1});
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  REQUIRE(t.value(s)[0] == Catch::Approx(std::exp(1.0) / z).epsilon(1e-12));
  REQUIRE(t.value(s)[1] == 0.0);
  REQUIRE(t.value(s)[2] == Catch::Approx(std::exp(2.0) / z).epsilon(1e-12));
  REQUIRE(t.value(s)[3] == Catch::Approx(std::exp(3.0) / z).epsilon(1e-12));
}

TEST_CASE("softmax over an all-masked vector is fatal") {
  Tape t;
  Var x = t.constant(Tensor::vector({1, 2}));
  REQUIRE_THROWS_AS(t.softmax(x, {0, 0}), std::invalid_argument);
}

TEST_CASE("softmax properties hold on random vectors") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    int n = 1 + static_cast<int>(rng.uniform(12));
    Tensor x = random_tensor(n, 1, rng, -20, 20);
    Tape t;
    Var s = t.softmax(t.constant(x));
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      REQUIRE(t.value(s)[i] >= 0.0);
      sum += t.value(s)[i];
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));

    // Shift invariance: softmax(x + c) == softmax(x).
    double c = rng.real(-50, 50);
    Tensor shifted = x;
    for (int i = 0; i < n; ++i) shifted[i] += c;
    Tape t2;
    Var s2 = t2.softmax(t2.constant(shifted));
    for (int i = 0; i < n; ++i)
      REQUIRE(t2.value(s2)[i] == Catch::Approx(t.value(s)[i]).margin(1e-12));
  }
}

TEST_CASE("shape mismatches report both shapes") {
  Tape t;
  Var m = t.constant(Tensor::zeros(2, 3));
  Var x = t.constant(Tensor::vector({1, 2}));
  REQUIRE_THROWS_WITH(t.matvec(m, x),
                      Catch::Matchers::ContainsSubstring("(2x3)") &&
                          Catch::Matchers::ContainsSubstring("(2x1)"));
  REQUIRE_THROWS_AS(t.add(m, x), std::invalid_argument);
  REQUIRE_THROWS_AS(t.matmul(m, m), std::invalid_argument);
}

TEST_CASE("l2-normalize returns unit vectors and guards degenerate input") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(5, 1, rng, -3, 3);
    Tape t;
    Var y = t.l2_normalize(t.constant(x));
    if (x.norm() > 1e-12) REQUIRE(t.value(y).norm() == Catch::Approx(1.0).margin(1e-12));
  }
  Tape t;
  Tensor zero(4, 1);
  Var y = t.l2_normalize(t.leaf(zero));
  REQUIRE(t.value(y).norm() == 0.0);
  REQUIRE(t.degenerate_normalizations() == 1);
}

TEST_CASE("backward of dot(x,x) is 2x") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}));
  GradientMap g = t.backward(t.dot(x, x));
  REQUIRE(g.at(x)[0] == 2.0);
  REQUIRE(g.at(x)[1] == 4.0);
}

TEST_CASE("inactive hinge kills all gradients") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(-3.0));
  GradientMap g = t.backward(t.hinge(x));
  REQUIRE(g.at(x)[0] == 0.0);
}

TEST_CASE("hinge subgradient at exactly zero is zero") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(0.0));
  GradientMap g = t.backward(t.hinge(x));
  REQUIRE(g.at(x)[0] == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}));
  REQUIRE_THROWS_AS(t.backward(x), std::invalid_argument);
}

TEST_CASE("unused leaves get zero gradients") {
  Tape t;
  Var x = t.leaf(Tensor::vector({1, 2}));
  Var unused = t.leaf(Tensor::zeros(3, 3));
  GradientMap g = t.backward(t.dot(x, x));
  REQUIRE(g.contains(unused));
  for (int i = 0; i < 9; ++i) REQUIRE(g.at(unused)[i] == 0.0);
}

TEST_CASE("random composites match central finite differences") {
  // Three stacked primitives with a random matrix and two vector leaves.
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> params = {random_tensor(4, 4, rng), random_tensor(4, 1, rng),
                                  random_tensor(4, 1, rng)};
    auto build = [](Tape& t, const std::vector<Var>& v) {
      Var h = t.matvec(v[0], v[1]);
      Var s = t.softmax(h);
      return t.dot(s, t.l2_normalize(v[2]));
    };
    auto report = gradient_check(build, params, 1e-5, 1e-6);
    CAPTURE(trial, report.max_rel_err);
    REQUIRE(report.ok());
    REQUIRE(report.max_rel_err < 1e-6);
  }
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(31);
  Tensor xv = random_tensor(5, 1, rng);
  Tensor mv = random_tensor(5, 5, rng);
  double a = 2.75, b = -0.5;

  auto grads_of = [&](double ca, double cb) {
    Tape t;
    Var x = t.leaf(xv);
    Var m = t.leaf(mv);
    Var l1 = t.frobenius_sq(t.matvec(m, x));
    Var l2 = t.dot(x, t.softmax(x));
    Var loss = t.add(t.scale(l1, ca), t.scale(l2, cb));
    GradientMap g = t.backward(loss);
    return std::make_pair(g.at(x), g.at(m));
  };

  auto [gx_ab, gm_ab] = grads_of(a, b);
  auto [gx_a, gm_a] = grads_of(1.0, 0.0);
  auto [gx_b, gm_b] = grads_of(0.0, 1.0);
  for (std::size_t i = 0; i < gx_ab.size(); ++i)
    REQUIRE(gx_ab[i] == Catch::Approx(a * gx_a[i] + b * gx_b[i]).margin(1e-10));
  for (std::size_t i = 0; i < gm_ab.size(); ++i)
    REQUIRE(gm_ab[i] == Catch::Approx(a * gm_a[i] + b * gm_b[i]).margin(1e-10));
}

TEST_CASE("gradient_check on a polynomial is exact to 1e-9") {
  std::vector<Tensor> params = {Tensor::vector({1.5, -2.0, 0.25})};
  auto build = [](Tape& t, const std::vector<Var>& v) { return t.frobenius_sq(v[0]); };
  auto report = gradient_check(build, params, 1e-5, 1e-9);
  REQUIRE(report.ok());
  REQUIRE(report.max_rel_err < 1e-9);
}

TEST_CASE("gradient_check excludes and reports hinge-kink coordinates") {
  // hinge input sits exactly at 0 for the first coordinate.
  std::vector<Tensor> params = {Tensor::vector({0.0, 1.0})};
  auto build = [](Tape& t, const std::vector<Var>& v) {
    Var h = t.hinge(v[0]);
    return t.dot(h, t.constant(Tensor::vector({1.0, 1.0})));
  };
  auto report = gradient_check(build, params, 1e-5, 1e-6);
  REQUIRE(report.excluded.size() == 1);
  REQUIRE(report.excluded[0].index == 0);
  REQUIRE(report.ok());
}

TEST_CASE("gradient_check rejects non-positive step") {
  std::vector<Tensor> params = {Tensor::scalar(1.0)};
  auto build = [](Tape& t, const std::vector<Var>& v) { return t.square(v[0]); };
  REQUIRE_THROWS_AS(gradient_check(build, params, 0.0), std::invalid_argument);
}

TEST_CASE("gather_rows accumulates duplicate indices on backward") {
  Tape t;
  Tensor m(3, 2);
  m.at(0, 0) = 1;
  m.at(1, 0) = 2;
  m.at(2, 0) = 3;
  Var mv = t.leaf(m);
  Var g = t.gather_rows(mv, {1, 1, 2});
  Var loss = t.frobenius_sq(g);
  GradientMap grads = t.backward(loss);
  REQUIRE(grads.at(mv).at(1, 0) == Catch::Approx(2 * 2.0 * 2));  // two copies of row 1
  REQUIRE(grads.at(mv).at(2, 0) == Catch::Approx(2 * 3.0));
  REQUIRE(grads.at(mv).at(0, 0) == 0.0);
}

TEST_CASE("sum_rows and mean_rows reduce rows to a vector") {
  Tape t;
  Tensor m(2, 3);
  m.at(0, 0) = 1;
  m.at(0, 1) = 2;
  m.at(0, 2) = 3;
  m.at(1, 0) = 4;
  m.at(1, 1) = 5;
  m.at(1, 2) = 6;
  Var mv = t.constant(m);
  Tensor s = t.value(t.sum_rows(mv));
  Tensor mean = t.value(t.mean_rows(mv));
  REQUIRE(s[0] == 5.0);
  REQUIRE(s[1] == 7.0);
  REQUIRE(s[2] == 9.0);
  REQUIRE(mean[1] == 3.5);
}

TEST_CASE("matmul, transpose and square agree with hand computation") {
  Tape t;
  Tensor a(2, 2);
  a.at(0, 0) = 1;
  a.at(0, 1) = 2;
  a.at(1, 0) = 3;
  a.at(1, 1) = 4;
  Var av = t.constant(a);
  Tensor sq = t.value(t.matmul(av, t.transpose(av)));
  REQUIRE(sq.at(0, 0) == 5.0);   // [1,2]x[1,2]
  REQUIRE(sq.at(0, 1) == 11.0);  // [1,2]x[3,4]
  REQUIRE(sq.at(1, 1) == 25.0);
  Tensor e = t.value(t.square(av));
  REQUIRE(e.at(1, 0) == 9.0);
}

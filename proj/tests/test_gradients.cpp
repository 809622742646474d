// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fat/ops.hpp"
#include "fat/tensor.hpp"
#include "gradient_suite.hpp"

using fat::Tensor;

TEST_CASE("simple quadratic gradient is near machine precision") {
  auto f = [](const Tensor& x) { return fat::sum_all(fat::mul(x, x)); };
  auto x = Tensor::from_data({4}, {1.0, -2.0, 0.5, 3.0});
  CHECK(fat::grad_check(f, x) <= 1e-8);
}

TEST_CASE("sum of softmax has tiny gradients handled without blowup") {
  // d(sum softmax)/dx is exactly zero; relative error uses max(1, |ref|).
  auto f = [](const Tensor& x) { return fat::sum_all(fat::softmax(x, -1)); };
  auto x = Tensor::from_data({1, 5}, {0.3, -1.2, 2.0, 0.0, 0.7});
  CHECK(fat::grad_check(f, x) <= 1e-6);
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  auto x = Tensor::from_data({2}, {3.0, 5.0}, true);
  auto y = fat::sum_all(fat::add(x, x));
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward requires a scalar root") {
  auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
  auto y = fat::scale(x, 2.0);
  CHECK_THROWS_AS(y.backward(), fat::ContractError);
}

TEST_CASE("grad_check rejects out-of-range eps") {
  auto f = [](const Tensor& x) { return fat::sum_all(x); };
  auto x = Tensor::from_data({2}, {1.0, 2.0});
  CHECK_THROWS_AS(fat::grad_check(f, x, 1e-9), fat::ContractError);
  CHECK_THROWS_AS(fat::grad_check(f, x, 1e-2), fat::ContractError);
}

TEST_CASE("per-operation finite-difference suite stays within 1e-5") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto results = gradsuite::run_cases(seed);
    REQUIRE(!results.empty());
    for (const auto& c : results) {
      INFO("case ", c.name, " seed ", seed);
      CHECK(c.worst <= 1e-5);
    }
  }
}

TEST_CASE("composite network gradient stays within 1e-4") {
  for (std::uint64_t seed : {1ull, 5ull}) {
    INFO("seed ", seed);
    CHECK(gradsuite::composite_case(seed) <= 1e-4);
  }
}

TEST_CASE("second backward pass after zero_grad reproduces the gradient") {
  auto x = Tensor::from_data({3}, {0.5, -1.0, 2.0}, true);
  auto run = [&] {
    auto y = fat::sum_all(fat::mul(x, fat::exp(x)));
    y.backward();
    auto g = x.grad();
    x.zero_grad();
    return g;
  };
  auto g1 = run();
  auto g2 = run();
  CHECK(g1 == g2);
}

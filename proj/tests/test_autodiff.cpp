// Copyright 2026 The Spectran Authors
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

#include "spectran/gradcheck.hpp"
#include "spectran/gradcheck_suite.hpp"

using namespace spectran;

TEST_CASE("grad_check on f(x) = sum(x^2)") {
  Rng rng(3);
  CheckParams params;
  params.add("x", Tensor<double>::uniform({5}, rng, -2, 2));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> gx(p[0].shape);
    auto x = tape.leaf(&p[0], grads ? &gx : nullptr);
    auto loss = tape.sum(tape.mul(x, x));
    if (grads) {
      tape.backward(loss);
      *grads = {gx};
    }
    return tape.scalar(loss);
  };
  GradCheckReport r = grad_check("sum_sq", f, params, 1e-5, 1e-4);
  REQUIRE(r.passed);
  REQUIRE(r.max_rel_error < 1e-7);
}

TEST_CASE("grad_check eps bounds enforced") {
  CheckParams params;
  params.add("x", Tensor<double>::full({1}, 1.0));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    if (grads) *grads = {Tensor<double>::full({1}, 2.0 * p[0].data[0])};
    return p[0].data[0] * p[0].data[0];
  };
  REQUIRE_THROWS_AS(grad_check("bad_eps", f, params, 1e-8, 1e-4), ConfigError);
  REQUIRE_THROWS_AS(grad_check("bad_eps", f, params, 1e-3, 1e-4), ConfigError);
}

TEST_CASE("grad_check flags a broken gradient") {
  GradCheckReport r = check_injected_fault(42, 1e-5, 1e-4);
  REQUIRE_FALSE(r.passed);
  REQUIRE(r.max_rel_error > 1e-2);
}

TEST_CASE("gradient suite: every differentiable op under 1e-4 over 5 seeds") {
  GradSuiteOptions opt;  // 5 seeds, eps 1e-5, tol 1e-4
  std::vector<GradCheckReport> reports = run_gradcheck_suite(opt);
  REQUIRE(reports.size() == 9);
  for (const auto& r : reports) {
    INFO(r.op_name << " max_rel_error=" << r.max_rel_error);
    REQUIRE(r.passed);
  }
}

TEST_CASE("lstm_cell and attention scorer pass the targeted checks") {
  for (std::uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
    REQUIRE(check_lstm_cell(seed, 1e-5, 1e-4).passed);
    REQUIRE(check_attention(seed, 1e-5, 1e-4).passed);
  }
}

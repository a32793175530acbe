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

#include "oracles.hpp"
#include "spectran/tape.hpp"

using namespace spectran;

namespace {

Tensor<double> rand_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1,
                           double hi = 1) {
  Tensor<double> t{std::move(shape)};
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity") {
  Rng rng(7);
  Tensor<double> eye = Tensor<double>::from_values({2, 2}, {1, 0, 0, 1});
  Tensor<double> b = rand_tensor({2, 3}, rng);
  Tape<double> tape;
  auto c = tape.matmul(tape.constant(eye), tape.constant(b));
  for (std::size_t i = 0; i < b.numel(); ++i) {
    REQUIRE(tape.val(c).data[i] == Catch::Approx(b.data[i]).margin(0));
  }
}

TEST_CASE("matmul hand-computed case") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::from_values({2, 2}, {1, 2, 3, 4}));
  auto b = tape.constant(Tensor<double>::from_values({2, 1}, {1, 1}));
  auto c = tape.matmul(a, b);
  REQUIRE(tape.val(c).data[0] == 3.0);
  REQUIRE(tape.val(c).data[1] == 7.0);
}

TEST_CASE("matmul zero annihilates") {
  Rng rng(8);
  Tensor<double> z = Tensor<double>::zeros({3, 4});
  Tensor<double> b = rand_tensor({4, 5}, rng);
  Tape<double> tape;
  auto c = tape.matmul(tape.constant(z), tape.constant(b));
  for (double v : tape.val(c).data) REQUIRE(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>::zeros({2, 3}));
  auto b = tape.constant(Tensor<double>::zeros({4, 2}));
  REQUIRE_THROWS_WITH(tape.matmul(a, b),
                      Catch::Matchers::ContainsSubstring("[2x3]") &&
                          Catch::Matchers::ContainsSubstring("[4x2]"));
}

TEST_CASE("matmul matches loop oracle and associativity holds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor<double> a = rand_tensor({4, 6}, rng);
    Tensor<double> b = rand_tensor({6, 3}, rng);
    Tensor<double> c = rand_tensor({3, 5}, rng);
    Tape<double> tape;
    auto va = tape.constant(a), vb = tape.constant(b), vc = tape.constant(c);
    auto ab = tape.matmul(va, vb);
    Tensor<double> want = oracle::matmul(a, b);
    for (std::size_t i = 0; i < want.numel(); ++i) {
      REQUIRE(tape.val(ab).data[i] == Catch::Approx(want.data[i]).margin(1e-12));
    }
    auto left = tape.matmul(ab, vc);
    auto right = tape.matmul(va, tape.matmul(vb, vc));
    for (std::size_t i = 0; i < tape.val(left).numel(); ++i) {
      REQUIRE(tape.val(left).data[i] ==
              Catch::Approx(tape.val(right).data[i]).margin(1e-8));
    }
  }
}

TEST_CASE("softmax uniform and stability") {
  Tape<double> tape;
  auto u = tape.softmax(tape.constant(Tensor<double>::full({4}, 1.25)));
  for (double v : tape.val(u).data) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));

  auto big = tape.softmax(tape.constant(Tensor<double>::from_values({2}, {1000, 0})));
  REQUIRE(tape.val(big).data[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(tape.val(big).data[1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(tape.val(big).all_finite());
}

TEST_CASE("softmax closed form [0, ln 3]") {
  Tape<double> tape;
  auto y = tape.softmax(tape.constant(Tensor<double>::from_values({2}, {0.0, std::log(3.0)})));
  REQUIRE(tape.val(y).data[0] == Catch::Approx(0.25).margin(1e-12));
  REQUIRE(tape.val(y).data[1] == Catch::Approx(0.75).margin(1e-12));
}

TEST_CASE("softmax sums to one and shift invariance") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    Tensor<double> s = rand_tensor({9}, rng, -40, 40);
    Tensor<double> shifted = s;
    double k = rng.uniform(-100, 100);
    for (auto& v : shifted.data) v += k;
    Tape<double> tape;
    auto y = tape.softmax(tape.constant(s));
    auto y2 = tape.softmax(tape.constant(shifted));
    double sum = 0;
    for (double v : tape.val(y).data) {
      REQUIRE(v > 0);
      sum += v;
    }
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t i = 0; i < s.numel(); ++i) {
      REQUIRE(tape.val(y).data[i] == Catch::Approx(tape.val(y2).data[i]).margin(1e-12));
    }
  }
}

TEST_CASE("softmax empty input is a dimension error") {
  Tape<double> tape;
  auto e = tape.constant(Tensor<double>{std::vector<std::size_t>{0}});
  REQUIRE_THROWS_AS(tape.softmax(e), DimensionError);
}

TEST_CASE("conv2d output length formula sweep") {
  // T' = floor((T + 2p - k)/s) + 1 over k in {1,3,5,7}, s in {1,2,3}, p in {0..3}
  for (std::size_t k = 1; k <= 7; k += 2) {
    for (std::size_t s = 1; s <= 3; ++s) {
      for (std::size_t p = 0; p <= 3; ++p) {
        std::size_t T = 25, F = 11;
        if (k > T + 2 * p || k > F + 2 * p) continue;
        Tape<double> tape;
        auto in = tape.constant(Tensor<double>::zeros({1, 25, 11}));
        auto kern = tape.constant(Tensor<double>{std::vector<std::size_t>{1, 1, k, k}});
        auto bias = tape.constant(Tensor<double>::zeros({1}));
        auto out = tape.conv2d(in, kern, bias, s, s, p, p);
        REQUIRE(tape.val(out).shape[1] == (T + 2 * p - k) / s + 1);
        REQUIRE(tape.val(out).shape[2] == (F + 2 * p - k) / s + 1);
      }
    }
  }
  // The front-end case: T=100, k=7, p=3, s=2 halves the length.
  Tape<double> tape;
  auto in = tape.constant(Tensor<double>::zeros({1, 100, 9}));
  auto kern = tape.constant(Tensor<double>{std::vector<std::size_t>{1, 1, 7, 7}});
  auto bias = tape.constant(Tensor<double>::zeros({1}));
  auto out = tape.conv2d(in, kern, bias, 2, 2, 3, 3);
  REQUIRE(tape.val(out).shape[1] == 50);
}

TEST_CASE("conv2d delta kernel with same padding is identity") {
  Rng rng(11);
  Tensor<double> in = rand_tensor({1, 6, 7}, rng);
  Tensor<double> k = Tensor<double>::zeros({1, 1, 3, 3});
  k.data[4] = 1.0;  // center tap
  Tape<double> tape;
  auto out = tape.conv2d(tape.constant(in), tape.constant(k),
                         tape.constant(Tensor<double>::zeros({1})), 1, 1, 1, 1);
  for (std::size_t i = 0; i < in.numel(); ++i) {
    REQUIRE(tape.val(out).data[i] == Catch::Approx(in.data[i]).margin(1e-15));
  }
}

TEST_CASE("conv2d matches nested-loop oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Tensor<double> in = rand_tensor({2, 9, 9}, rng);
    Tensor<double> k = rand_tensor({3, 2, 3, 3}, rng);
    Tensor<double> b = rand_tensor({3}, rng);
    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
      Tape<double> tape;
      auto out = tape.conv2d(tape.constant(in), tape.constant(k), tape.constant(b),
                             stride, stride, 1, 1);
      Tensor<double> want = oracle::conv2d(in, k, b, stride, stride, 1, 1);
      REQUIRE(tape.val(out).shape == want.shape);
      for (std::size_t i = 0; i < want.numel(); ++i) {
        REQUIRE(tape.val(out).data[i] == Catch::Approx(want.data[i]).margin(1e-12));
      }
    }
  }
}

TEST_CASE("conv2d kernel larger than padded input") {
  Tape<double> tape;
  auto in = tape.constant(Tensor<double>::zeros({1, 3, 3}));
  auto k = tape.constant(Tensor<double>{std::vector<std::size_t>{1, 1, 9, 9}});
  auto b = tape.constant(Tensor<double>::zeros({1}));
  REQUIRE_THROWS_AS(tape.conv2d(in, k, b, 1, 1, 1, 1), DimensionError);
}

TEST_CASE("lstm_cell zero weights gives zero state") {
  Tape<double> tape;
  std::size_t d = 3, din = 2;
  auto x = tape.constant(Tensor<double>::from_values({2}, {0.3, -0.4}));
  auto h = tape.constant(Tensor<double>::zeros({3}));
  auto c = tape.constant(Tensor<double>::zeros({3}));
  auto wx = tape.constant(Tensor<double>::zeros({4 * d, din}));
  auto wh = tape.constant(Tensor<double>::zeros({4 * d, d}));
  auto b = tape.constant(Tensor<double>::zeros({4 * d}));
  auto hc = tape.lstm_cell(x, h, c, wx, wh, b);
  for (std::size_t j = 0; j < d; ++j) {
    REQUIRE(tape.val(hc).at(0, j) == Catch::Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("lstm_cell saturated gates carry the cell state") {
  Tape<double> tape;
  std::size_t d = 2, din = 1;
  auto x = tape.constant(Tensor<double>::from_values({1}, {0.5}));
  auto h = tape.constant(Tensor<double>::zeros({2}));
  auto c = tape.constant(Tensor<double>::from_values({2}, {0.7, -1.2}));
  auto wx = tape.constant(Tensor<double>::zeros({4 * d, din}));
  auto wh = tape.constant(Tensor<double>::zeros({4 * d, d}));
  Tensor<double> bias = Tensor<double>::zeros({4 * d});
  bias.data[0] = bias.data[1] = -40.0;  // input gate closed
  bias.data[2] = bias.data[3] = 40.0;   // forget gate open
  auto hc = tape.lstm_cell(x, h, c, wx, wh, tape.constant(bias));
  REQUIRE(tape.val(hc).at(1, 0) == Catch::Approx(0.7).margin(1e-9));
  REQUIRE(tape.val(hc).at(1, 1) == Catch::Approx(-1.2).margin(1e-9));
}

TEST_CASE("lstm_cell matches scalar oracle and stays in (-1, 1)") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    std::size_t d = 4, din = 3;
    Tensor<double> x = rand_tensor({din}, rng);
    Tensor<double> h0 = rand_tensor({d}, rng);
    Tensor<double> c0 = rand_tensor({d}, rng);
    Tensor<double> wx = rand_tensor({4 * d, din}, rng);
    Tensor<double> wh = rand_tensor({4 * d, d}, rng);
    Tensor<double> b = rand_tensor({4 * d}, rng);

    Tape<double> tape;
    auto hc = tape.lstm_cell(tape.constant(x), tape.constant(h0), tape.constant(c0),
                             tape.constant(wx), tape.constant(wh), tape.constant(b));

    std::vector<double> h(h0.data.begin(), h0.data.end());
    std::vector<double> c(c0.data.begin(), c0.data.end());
    oracle::lstm_step(std::vector<double>(x.data.begin(), x.data.end()), h, c, wx, wh, b);
    for (std::size_t j = 0; j < d; ++j) {
      REQUIRE(tape.val(hc).at(0, j) == Catch::Approx(h[j]).margin(1e-10));
      REQUIRE(tape.val(hc).at(1, j) == Catch::Approx(c[j]).margin(1e-10));
      REQUIRE(std::abs(tape.val(hc).at(0, j)) < 1.0);
    }
  }
}

TEST_CASE("lstm_cell shape mismatch") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::zeros({3}));
  auto h = tape.constant(Tensor<double>::zeros({2}));
  auto c = tape.constant(Tensor<double>::zeros({2}));
  auto wx = tape.constant(Tensor<double>::zeros({8, 4}));  // wrong input dim
  auto wh = tape.constant(Tensor<double>::zeros({8, 2}));
  auto b = tape.constant(Tensor<double>::zeros({8}));
  REQUIRE_THROWS_AS(tape.lstm_cell(x, h, c, wx, wh, b), DimensionError);
}

TEST_CASE("backward: sum gives ones, quadratic gives 2x") {
  Tensor<double> x = Tensor<double>::from_values({3}, {3.0, -1.0, 0.5});
  Tensor<double> gx(x.shape);
  Tape<double> tape;
  auto vx = tape.leaf(&x, &gx);
  auto s = tape.sum(vx);
  tape.backward(s);
  for (double g : gx.data) REQUIRE(g == 1.0);

  Tensor<double> gx2(x.shape);
  Tape<double> tape2;
  auto vx2 = tape2.leaf(&x, &gx2);
  auto s2 = tape2.sum(tape2.mul(vx2, vx2));
  tape2.backward(s2);
  REQUIRE(gx2.data[0] == Catch::Approx(6.0).margin(1e-12));
  REQUIRE(gx2.data[1] == Catch::Approx(-2.0).margin(1e-12));
}

TEST_CASE("backward rejects non-scalar roots") {
  Tape<double> tape;
  auto v = tape.constant(Tensor<double>::zeros({2, 2}));
  REQUIRE_THROWS_AS(tape.backward(v), DimensionError);
}

TEST_CASE("backward leaves unreachable parameters at zero") {
  Tensor<double> x = Tensor<double>::from_values({2}, {1.0, 2.0});
  Tensor<double> y = Tensor<double>::from_values({2}, {5.0, 6.0});
  Tensor<double> gx(x.shape), gy(y.shape);
  Tape<double> tape;
  auto vx = tape.leaf(&x, &gx);
  tape.leaf(&y, &gy);  // never used downstream
  tape.backward(tape.sum(vx));
  REQUIRE(gx.data[0] == 1.0);
  REQUIRE(gy.data[0] == 0.0);
  REQUIRE(gy.data[1] == 0.0);
}

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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "spectran/error.hpp"
#include "spectran/rng.hpp"

namespace spectran {

// Dense row-major tensor.  Scalar is double in test mode (gradient checks)
// and float in training mode.
template <typename Scalar>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Scalar> data;
  bool requires_grad = false;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), Scalar(0));
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
  }

  static Tensor zeros(std::initializer_list<std::size_t> s) {
    return Tensor(std::vector<std::size_t>(s));
  }

  static Tensor full(std::initializer_list<std::size_t> s, Scalar v) {
    Tensor t{std::vector<std::size_t>(s)};
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from_values(std::initializer_list<std::size_t> s,
                            std::initializer_list<Scalar> values) {
    Tensor t{std::vector<std::size_t>(s)};
    if (t.data.size() != values.size()) {
      throw DimensionError(strcat_msg("tensor literal: shape wants ", t.data.size(),
                                      " values, got ", values.size()));
    }
    std::copy(values.begin(), values.end(), t.data.begin());
    return t;
  }

  static Tensor uniform(std::initializer_list<std::size_t> s, Rng& rng,
                        double lo, double hi) {
    Tensor t{std::vector<std::size_t>(s)};
    for (auto& v : t.data) v = static_cast<Scalar>(rng.uniform(lo, hi));
    return t;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  Scalar& operator[](std::size_t i) { return data[i]; }
  Scalar operator[](std::size_t i) const { return data[i]; }

  Scalar& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const Scalar& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  Scalar& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const Scalar& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  Scalar* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }
  const Scalar* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void zero() { std::fill(data.begin(), data.end(), Scalar(0)); }

  bool all_finite() const {
    for (Scalar v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0;
    for (Scalar v : data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<Other>(data[i]);
    out.requires_grad = requires_grad;
    return out;
  }
};

template <typename Scalar>
std::string shape_str(const Tensor<Scalar>& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

// Xavier-uniform draw in +-sqrt(6 / (fan_in + fan_out)).
template <typename Scalar>
Tensor<Scalar> xavier_uniform(std::initializer_list<std::size_t> s,
                              std::size_t fan_in, std::size_t fan_out,
                              std::uint64_t seed) {
  Rng rng(seed);
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor<Scalar>::uniform(s, rng, -limit, limit);
}

}  // namespace spectran

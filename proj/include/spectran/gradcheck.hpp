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

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spectran/error.hpp"
#include "spectran/tensor.hpp"

namespace spectran {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  std::map<std::string, double> per_param_errors;
  bool passed = false;
};

// A named set of double tensors to differentiate against.
struct CheckParams {
  std::vector<std::pair<std::string, Tensor<double>>> items;

  Tensor<double>& add(const std::string& name, Tensor<double> t) {
    items.emplace_back(name, std::move(t));
    return items.back().second;
  }
  Tensor<double>& operator[](std::size_t i) { return items[i].second; }
};

// Central-difference check of a scalar function of the parameters.  The
// callable must rebuild its graph from the current parameter values and
// return (value, analytic gradients per parameter, in item order).
//
// rel_error = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(
    const std::string& op_name,
    const std::function<double(CheckParams&, std::vector<Tensor<double>>* grads)>& f,
    CheckParams& params, double eps = 1e-5, double tolerance = 1e-4) {
  if (eps < 1e-7 || eps > 1e-4) {
    throw ConfigError(strcat_msg("grad_check: eps must lie in [1e-7, 1e-4], got ", eps));
  }
  GradCheckReport report;
  report.op_name = op_name;

  std::vector<Tensor<double>> analytic;
  double base = f(params, &analytic);
  if (!std::isfinite(base)) {
    throw NumericError(strcat_msg("grad_check(", op_name, "): non-finite loss"));
  }
  if (analytic.size() != params.items.size()) {
    throw DimensionError(strcat_msg("grad_check(", op_name, "): expected ",
                                    params.items.size(), " gradients, got ",
                                    analytic.size()));
  }

  for (std::size_t p = 0; p < params.items.size(); ++p) {
    const std::string& name = params.items[p].first;
    Tensor<double>& t = params.items[p].second;
    if (!analytic[p].all_finite()) {
      throw NumericError(strcat_msg("grad_check(", op_name, "): non-finite gradient in ",
                                    name));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double saved = t.data[i];
      t.data[i] = saved + eps;
      double up = f(params, nullptr);
      t.data[i] = saved - eps;
      double down = f(params, nullptr);
      t.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError(strcat_msg("grad_check(", op_name,
                                      "): non-finite perturbed loss for ", name));
      }
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[p].data[i];
      double rel = std::abs(a - numeric) /
                   std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
    report.per_param_errors[name] = worst;
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace spectran

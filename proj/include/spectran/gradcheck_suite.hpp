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

#include <functional>
#include <string>
#include <vector>

#include "spectran/gradcheck.hpp"
#include "spectran/model.hpp"
#include "spectran/train.hpp"

namespace spectran {

// Finite-difference verification of every differentiable operation, run in
// 64-bit mode.  Seeds are fixed derivations so the suite is a reproducible
// gate rather than a flaky one.

struct GradSuiteOptions {
  std::size_t seeds = 5;
  double eps = 1e-5;
  double tolerance = 1e-4;
  bool inject_fault = false;  // adds a deliberately broken row (harness self-test)
};

namespace detail {

inline Tensor<double> rand_tensor(std::initializer_list<std::size_t> shape, Rng& rng,
                                  double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::uniform(shape, rng, lo, hi);
}

// Worst-case merge across seeds.
inline void merge_report(GradCheckReport& into, const GradCheckReport& r) {
  into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
  for (const auto& [k, v] : r.per_param_errors) {
    auto it = into.per_param_errors.find(k);
    if (it == into.per_param_errors.end() || it->second < v) into.per_param_errors[k] = v;
  }
  into.passed = into.passed && r.passed;
}

}  // namespace detail

using GradCase =
    std::function<GradCheckReport(std::uint64_t seed, double eps, double tol)>;

inline GradCheckReport check_matmul(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("a", detail::rand_tensor({3, 4}, rng));
  params.add("b", detail::rand_tensor({4, 2}, rng));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> ga(p[0].shape), gb(p[1].shape);
    auto a = tape.leaf(&p[0], grads ? &ga : nullptr);
    auto b = tape.leaf(&p[1], grads ? &gb : nullptr);
    auto c = tape.matmul(a, b);
    auto loss = tape.sum(tape.mul(c, c));
    if (grads) {
      tape.backward(loss);
      *grads = {ga, gb};
    }
    return tape.scalar(loss);
  };
  return grad_check("matmul", f, params, eps, tol);
}

inline GradCheckReport check_conv2d(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("input", detail::rand_tensor({2, 5, 6}, rng));
  params.add("kernels", detail::rand_tensor({2, 2, 3, 3}, rng));
  params.add("bias", detail::rand_tensor({2}, rng));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape), g1(p[1].shape), g2(p[2].shape);
    auto in = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto k = tape.leaf(&p[1], grads ? &g1 : nullptr);
    auto b = tape.leaf(&p[2], grads ? &g2 : nullptr);
    auto c = tape.conv2d(in, k, b, 2, 2, 1, 1);
    auto loss = tape.sum(tape.tanh_act(c));
    if (grads) {
      tape.backward(loss);
      *grads = {g0, g1, g2};
    }
    return tape.scalar(loss);
  };
  return grad_check("conv2d", f, params, eps, tol);
}

inline GradCheckReport check_lstm_cell(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const std::size_t din = 3, d = 4;
  CheckParams params;
  params.add("x", detail::rand_tensor({din}, rng));
  params.add("h_prev", detail::rand_tensor({d}, rng));
  params.add("c_prev", detail::rand_tensor({d}, rng));
  params.add("wx", detail::rand_tensor({4 * d, din}, rng));
  params.add("wh", detail::rand_tensor({4 * d, d}, rng));
  params.add("b", detail::rand_tensor({4 * d}, rng));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Tensor<double>> sink;
    std::vector<Tape<double>::Var> vars;
    for (auto& [name, t] : p.items) sink.emplace_back(t.shape);
    for (std::size_t i = 0; i < p.items.size(); ++i)
      vars.push_back(tape.leaf(&p[i], grads ? &sink[i] : nullptr));
    auto hc = tape.lstm_cell(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5]);
    auto loss = tape.sum(tape.mul(hc, hc));
    if (grads) {
      tape.backward(loss);
      *grads = sink;
    }
    return tape.scalar(loss);
  };
  return grad_check("lstm_cell", f, params, eps, tol);
}

inline GradCheckReport check_softmax(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("scores", detail::rand_tensor({6}, rng, -2.0, 2.0));
  Tensor<double> mixing = detail::rand_tensor({6}, rng);
  auto f = [mixing](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape);
    auto s = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto y = tape.softmax(s);
    auto loss = tape.sum(tape.mul(y, tape.constant(mixing)));
    if (grads) {
      tape.backward(loss);
      *grads = {g0};
    }
    return tape.scalar(loss);
  };
  return grad_check("softmax", f, params, eps, tol);
}

inline GradCheckReport check_attention(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const std::size_t d_att = 4, d_dec = 3, enc_dim = 5, T = 4;
  CheckParams params;
  params.add("s", detail::rand_tensor({d_dec}, rng));
  params.add("H", detail::rand_tensor({T, enc_dim}, rng));
  params.add("W", detail::rand_tensor({d_att, d_dec}, rng));
  params.add("V", detail::rand_tensor({d_att, enc_dim}, rng));
  params.add("b", detail::rand_tensor({d_att}, rng));
  params.add("w", detail::rand_tensor({d_att}, rng));
  Tensor<double> mixing = detail::rand_tensor({enc_dim}, rng);
  auto f = [mixing, T](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Tensor<double>> sink;
    for (auto& [name, t] : p.items) sink.emplace_back(t.shape);
    std::vector<Tape<double>::Var> vars;
    for (std::size_t i = 0; i < p.items.size(); ++i)
      vars.push_back(tape.leaf(&p[i], grads ? &sink[i] : nullptr));
    BoundParams<double> bound;
    bound.vars["att.W"] = vars[2];
    bound.vars["att.b"] = vars[4];
    bound.vars["att.w"] = vars[5];
    EncoderOutput<double> enc;
    enc.states = vars[1];
    enc.valid = T;
    auto vh = tape.matmul(vars[1], tape.transpose(vars[3]));
    auto ctx = attend(tape, bound, vars[0], enc, vh);
    auto loss = tape.sum(tape.mul(ctx, tape.constant(mixing)));
    if (grads) {
      tape.backward(loss);
      *grads = sink;
    }
    return tape.scalar(loss);
  };
  return grad_check("attention_scorer", f, params, eps, tol);
}

inline GradCheckReport check_loss_l2(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("pred", detail::rand_tensor({12}, rng, 0.05, 0.95));
  Tensor<double> target = detail::rand_tensor({2, 6}, rng, 0.0, 1.0);
  auto f = [target](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape);
    auto pred = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto loss = sq_err_sum_node(tape, pred, target, 2, 6);
    if (grads) {
      tape.backward(loss);
      *grads = {g0};
    }
    return tape.scalar(loss);
  };
  return grad_check("loss_l2", f, params, eps, tol);
}

inline GradCheckReport check_loss_kl(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("pred", detail::rand_tensor({12}, rng, 0.05, 0.95));
  Tensor<double> target = detail::rand_tensor({2, 6}, rng, 0.0, 1.0);
  auto f = [target](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape);
    auto pred = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto loss = kl_sum_node(tape, pred, target, 2, 6);
    if (grads) {
      tape.backward(loss);
      *grads = {g0};
    }
    return tape.scalar(loss);
  };
  return grad_check("loss_kl", f, params, eps, tol);
}

inline GradCheckReport check_loss_xent(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const std::size_t rows = 2, F = 3, K = 5;
  CheckParams params;
  params.add("logits", detail::rand_tensor({rows * F * K}, rng));
  Tensor<std::int32_t> bins(std::vector<std::size_t>{rows, F});
  for (auto& b : bins.data) b = static_cast<std::int32_t>(rng.next_below(K));
  auto f = [bins, rows](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape);
    auto logits = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto loss = xent_sum_node(tape, logits, bins, rows, 3, 5);
    if (grads) {
      tape.backward(loss);
      *grads = {g0};
    }
    return tape.scalar(loss);
  };
  return grad_check("loss_xent", f, params, eps, tol);
}

inline ModelConfig tiny_gradcheck_config() {
  ModelConfig cfg;
  cfg.use_cnn = true;
  cfg.conv_channels = 2;
  cfg.encoder_dim = 4;
  cfg.pyramid_layers = 1;
  cfg.bidirectional = true;
  cfg.use_attention = true;
  cfg.attention_dim = 4;
  cfg.decoder_dim = 4;
  cfg.reduction = 2;
  cfg.freq_bins = 6;
  cfg.quantize_bins = 5;
  return cfg;
}

// End-to-end check: every model parameter against the mixed training loss.
inline GradCheckReport check_full_model(std::uint64_t seed, double eps, double tol) {
  ModelConfig cfg = tiny_gradcheck_config();
  const std::size_t T_src = 9, T_tgt = 7, F = cfg.freq_bins, K = cfg.quantize_bins;
  Rng rng(seed);
  Tensor<double> source = detail::rand_tensor({T_src, F}, rng, 0.0, 1.0);
  Tensor<double> target = detail::rand_tensor({T_tgt, F}, rng, 0.0, 1.0);
  Tensor<std::int32_t> bins(std::vector<std::size_t>{T_tgt, F});
  for (auto& b : bins.data) b = static_cast<std::int32_t>(rng.next_below(K));

  CheckParams params;
  {
    ParamStore<double> store = init_params<double>(cfg, seed);
    for (auto& e : store.entries()) params.add(e.name, e.value);
  }
  // The loss is scaled down so that elements with near-zero gradients keep
  // their O(eps^2) finite-difference truncation below the 1e-8 denominator
  // floor of the relative-error metric; relative comparisons elsewhere are
  // scale-invariant.
  const double l_kl = 0.005, l_l2 = 0.01, l_xent = 0.001;
  auto f = [&, source, target, bins](CheckParams& p, std::vector<Tensor<double>>* grads) {
    ParamStore<double> store;
    for (auto& [name, t] : p.items) store.add(name, t);
    Tape<double> tape;
    tape.set_grad_enabled(grads != nullptr);
    BoundParams<double> bound(tape, store);
    ForwardResult<double> fwd = forward(tape, bound, cfg, source, T_src,
                                        DecodeMode::kTeacherForced, T_tgt, &target);
    std::vector<std::pair<double, Tape<double>::Var>> terms;
    std::size_t r = cfg.reduction;
    std::size_t frames = T_tgt, cells = frames * F;
    for (std::size_t si = 0; si < fwd.steps; ++si) {
      std::size_t row0 = si * r;
      if (row0 >= frames) break;
      std::size_t valid_rows = std::min(r, frames - row0);
      Tensor<double> block(std::vector<std::size_t>{r, F});
      Tensor<std::int32_t> bin_block(std::vector<std::size_t>{r, F});
      for (std::size_t k = 0; k < valid_rows; ++k) {
        std::copy(target.row_ptr(row0 + k), target.row_ptr(row0 + k) + F, block.row_ptr(k));
        std::copy(&bins.at(row0 + k, 0), &bins.at(row0 + k, 0) + F, bin_block.row_ptr(k));
      }
      terms.emplace_back(l_l2 / cells, sq_err_sum_node(tape, fwd.step_frames[si], block,
                                                       valid_rows, F));
      terms.emplace_back(l_kl / frames, kl_sum_node(tape, fwd.step_frames[si], block,
                                                    valid_rows, F));
      terms.emplace_back(l_xent / cells, xent_sum_node(tape, fwd.step_logits[si], bin_block,
                                                       valid_rows, F, K));
    }
    auto loss = tape.combine_scalars(terms);
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (auto& [name, t] : p.items) grads->push_back(store.at(name).grad);
    }
    return tape.scalar(loss);
  };
  return grad_check("full_model", f, params, eps, tol);
}

// Harness self-test: the analytic gradient is deliberately scaled, so this
// row must fail.
inline GradCheckReport check_injected_fault(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  CheckParams params;
  params.add("x", detail::rand_tensor({4}, rng));
  auto f = [](CheckParams& p, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    Tensor<double> g0(p[0].shape);
    auto x = tape.leaf(&p[0], grads ? &g0 : nullptr);
    auto loss = tape.sum(tape.mul(x, x));
    if (grads) {
      tape.backward(loss);
      for (auto& g : g0.data) g *= 1.5;  // wrong on purpose
      *grads = {g0};
    }
    return tape.scalar(loss);
  };
  return grad_check("injected_fault", f, params, eps, tol);
}

inline std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opt) {
  std::vector<std::pair<std::string, GradCheckReport (*)(std::uint64_t, double, double)>>
      cases = {
          {"matmul", check_matmul},
          {"conv2d", check_conv2d},
          {"lstm_cell", check_lstm_cell},
          {"softmax", check_softmax},
          {"attention_scorer", check_attention},
          {"loss_l2", check_loss_l2},
          {"loss_kl", check_loss_kl},
          {"loss_xent", check_loss_xent},
          {"full_model", check_full_model},
      };
  if (opt.inject_fault) cases.push_back({"injected_fault", check_injected_fault});

  std::vector<GradCheckReport> out;
  for (const auto& [name, fn] : cases) {
    GradCheckReport merged;
    merged.op_name = name;
    merged.passed = true;
    for (std::size_t s = 0; s < opt.seeds; ++s) {
      GradCheckReport r = fn(derive_seed(0xC0FFEE, name, s), opt.eps, opt.tolerance);
      detail::merge_report(merged, r);
    }
    out.push_back(std::move(merged));
  }
  return out;
}

}  // namespace spectran

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
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "spectran/error.hpp"
#include "spectran/tensor.hpp"

namespace spectran {

namespace detail {

template <typename S>
double dot(const S* a, const S* b, std::size_t n) {
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

template <typename S>
void axpy(S* y, double a, const S* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += static_cast<S>(a * x[i]);
}

}  // namespace detail

// Reverse-mode tape.  The graph is recorded dynamically during the forward
// pass and rebuilt from scratch each training step.  Parameters live outside
// the tape and are registered as leaves pointing at their storage; their
// gradients accumulate into caller-provided sinks, which is also how batch
// items sum their contributions.
//
// A tape instance is confined to one thread.  backward() may be called once.
template <typename Scalar>
class Tape {
 public:
  using Var = std::uint32_t;

  Tape() { nodes_.reserve(512); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

  // ---- node construction -------------------------------------------------

  // Leaf over external storage.  grad_sink, when given, receives accumulated
  // gradients during backward(); it must outlive the tape and match shape.
  Var leaf(const Tensor<Scalar>* value, Tensor<Scalar>* grad_sink = nullptr) {
    Node n;
    n.external = value;
    n.grad_sink = grad_sink;
    n.needs_grad = grad_enabled_ && (grad_sink != nullptr || value->requires_grad);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  Var constant(Tensor<Scalar> value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  const Tensor<Scalar>& val(Var v) const {
    const Node& n = nodes_[v];
    return n.external ? *n.external : n.value;
  }

  double scalar(Var v) const {
    const Tensor<Scalar>& t = val(v);
    if (t.numel() != 1) {
      throw DimensionError(strcat_msg("expected scalar node, got shape ", shape_str(t)));
    }
    return static_cast<double>(t.data[0]);
  }

  bool needs_grad(Var v) const { return nodes_[v].needs_grad; }

  // Gradient buffer of a node; valid during/after backward().
  Tensor<Scalar>& grad(Var v) {
    Node& n = nodes_[v];
    if (n.grad_sink) return *n.grad_sink;
    return n.grad;
  }

  // ---- low-level builder for fused ops ------------------------------------

  // Appends a computed node.  Returns its id; the caller may then attach a
  // backward closure with set_backward (skipped when gradients are off or no
  // input needs them).
  Var make_node(Tensor<Scalar> value, std::initializer_list<Var> inputs) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = false;
    if (grad_enabled_) {
      for (Var in : inputs) {
        if (nodes_[in].needs_grad) {
          n.needs_grad = true;
          break;
        }
      }
    }
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  void set_backward(Var v, std::function<void(Tape&)> fn) {
    if (nodes_[v].needs_grad) nodes_[v].backward = std::move(fn);
  }

  // ---- reverse pass --------------------------------------------------------

  // Populates gradients of every reachable leaf; unreachable sinks are left
  // as the caller zeroed them.
  void backward(Var root) {
    const Tensor<Scalar>& rv = val(root);
    if (rv.numel() != 1) {
      throw DimensionError(strcat_msg("backward: root must be scalar, got shape ",
                                      shape_str(rv)));
    }
    // Allocate and zero internal gradient buffers.
    for (std::size_t i = 0; i <= root; ++i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad_sink) continue;
      const Tensor<Scalar>& v = n.external ? *n.external : n.value;
      n.grad.shape = v.shape;
      n.grad.data.assign(v.numel(), Scalar(0));
    }
    if (!nodes_[root].needs_grad) return;
    grad(root).data[0] = Scalar(1);
    for (std::size_t i = root + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.needs_grad && n.backward) n.backward(*this);
    }
  }

  // Numeric-core invariant: no NaN/Inf survives a pass.  Used by tests and
  // the gradient checker; too costly for the inner training loop.
  void check_finite() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!val(static_cast<Var>(i)).all_finite()) {
        throw NumericError(strcat_msg("non-finite value in node ", i));
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise and shape ops ------------------------------------------

  Var add(Var a, Var b) { return binary_elementwise(a, b, /*sub=*/false); }
  Var sub(Var a, Var b) { return binary_elementwise(a, b, /*sub=*/true); }

  Var mul(Var a, Var b) {
    const Tensor<Scalar>& ta = val(a);
    const Tensor<Scalar>& tb = val(b);
    require_same_shape(ta, tb, "mul");
    Tensor<Scalar> out;
    out.shape = ta.shape;
    out.data.resize(ta.numel());
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    Var v = make_node(std::move(out), {a, b});
    set_backward(v, [this, v, a, b](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      const Tensor<Scalar>& ta2 = t.val(a);
      const Tensor<Scalar>& tb2 = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<Scalar>& ga = t.grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * tb2.data[i];
      }
      if (t.needs_grad(b)) {
        Tensor<Scalar>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * ta2.data[i];
      }
    });
    return v;
  }

  Var scale(Var a, double c) {
    const Tensor<Scalar>& ta = val(a);
    Tensor<Scalar> out;
    out.shape = ta.shape;
    out.data.resize(ta.numel());
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = static_cast<Scalar>(c * ta.data[i]);
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, c](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga.data[i] += static_cast<Scalar>(c * g.data[i]);
    });
    return v;
  }

  // Weighted sum of scalar nodes: sum_i coeff_i * term_i.
  Var combine_scalars(const std::vector<std::pair<double, Var>>& terms) {
    double acc = 0;
    for (const auto& [c, var] : terms) acc += c * scalar(var);
    Tensor<Scalar> out = Tensor<Scalar>::full({1}, static_cast<Scalar>(acc));
    Node n;
    n.value = std::move(out);
    n.needs_grad = false;
    if (grad_enabled_) {
      for (const auto& [c, var] : terms) {
        if (nodes_[var].needs_grad) n.needs_grad = true;
      }
    }
    nodes_.push_back(std::move(n));
    Var v = static_cast<Var>(nodes_.size() - 1);
    set_backward(v, [this, v, terms](Tape& t) {
      double g = static_cast<double>(t.grad(v).data[0]);
      for (const auto& [c, var] : terms) {
        if (t.needs_grad(var)) t.grad(var).data[0] += static_cast<Scalar>(c * g);
      }
    });
    return v;
  }

  Var relu(Var a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; },
                 [](double x, double /*y*/) { return x > 0 ? 1.0 : 0.0; });
  }

  Var sigmoid(Var a) {
    return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double /*x*/, double y) { return y * (1.0 - y); });
  }

  Var tanh_act(Var a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](double /*x*/, double y) { return 1.0 - y * y; });
  }

  Var sum(Var a) {
    const Tensor<Scalar>& ta = val(a);
    double acc = 0;
    for (Scalar x : ta.data) acc += static_cast<double>(x);
    Var v = make_node(Tensor<Scalar>::full({1}, static_cast<Scalar>(acc)), {a});
    set_backward(v, [this, v, a](Tape& t) {
      if (!t.needs_grad(a)) return;
      Scalar g = t.grad(v).data[0];
      for (Scalar& x : t.grad(a).data) x += g;
    });
    return v;
  }

  // Copy of row i of a 2-D node.
  Var row(Var a, std::size_t i) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 2 || i >= ta.shape[0]) {
      throw DimensionError(strcat_msg("row ", i, " out of range for ", shape_str(ta)));
    }
    std::size_t cols = ta.shape[1];
    Tensor<Scalar> out(std::vector<std::size_t>{cols});
    std::copy(ta.row_ptr(i), ta.row_ptr(i) + cols, out.data.begin());
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, i, cols](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Scalar* dst = t.grad(a).data.data() + i * cols;
      for (std::size_t k = 0; k < cols; ++k) dst[k] += g.data[k];
    });
    return v;
  }

  Var concat(const std::vector<Var>& parts) {
    std::size_t total = 0;
    for (Var p : parts) total += val(p).numel();
    Tensor<Scalar> out(std::vector<std::size_t>{total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor<Scalar>& tp = val(p);
      std::copy(tp.data.begin(), tp.data.end(), out.data.begin() + off);
      off += tp.numel();
    }
    Node n;
    n.value = std::move(out);
    n.needs_grad = false;
    if (grad_enabled_) {
      for (Var p : parts)
        if (nodes_[p].needs_grad) n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    Var v = static_cast<Var>(nodes_.size() - 1);
    set_backward(v, [this, v, parts](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      std::size_t off2 = 0;
      for (Var p : parts) {
        std::size_t n2 = t.val(p).numel();
        if (t.needs_grad(p)) {
          Tensor<Scalar>& gp = t.grad(p);
          for (std::size_t k = 0; k < n2; ++k) gp.data[k] += g.data[off2 + k];
        }
        off2 += n2;
      }
    });
    return v;
  }

  // Stacks equal-length vector nodes as matrix rows.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw DimensionError("stack_rows: empty input");
    std::size_t cols = val(rows[0]).numel();
    Tensor<Scalar> out(std::vector<std::size_t>{rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Tensor<Scalar>& r = val(rows[i]);
      if (r.numel() != cols) throw DimensionError("stack_rows: ragged rows");
      std::copy(r.data.begin(), r.data.end(), out.row_ptr(i));
    }
    Node n;
    n.value = std::move(out);
    n.needs_grad = false;
    if (grad_enabled_) {
      for (Var r : rows)
        if (nodes_[r].needs_grad) n.needs_grad = true;
    }
    nodes_.push_back(std::move(n));
    Var v = static_cast<Var>(nodes_.size() - 1);
    set_backward(v, [this, v, rows, cols](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!t.needs_grad(rows[i])) continue;
        Tensor<Scalar>& gr = t.grad(rows[i]);
        const Scalar* src = g.data.data() + i * cols;
        for (std::size_t k = 0; k < cols; ++k) gr.data[k] += src[k];
      }
    });
    return v;
  }

  // Concatenates adjacent row pairs of a T x D matrix into ceil(T/2) x 2D;
  // a missing last partner row is zero.
  Var gather_pairs(Var a) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 2) throw DimensionError("gather_pairs: matrix expected");
    std::size_t rows = ta.shape[0], cols = ta.shape[1];
    std::size_t out_rows = (rows + 1) / 2;
    Tensor<Scalar> out(std::vector<std::size_t>{out_rows, 2 * cols});
    for (std::size_t i = 0; i < out_rows; ++i) {
      std::copy(ta.row_ptr(2 * i), ta.row_ptr(2 * i) + cols, out.row_ptr(i));
      if (2 * i + 1 < rows) {
        std::copy(ta.row_ptr(2 * i + 1), ta.row_ptr(2 * i + 1) + cols,
                  out.row_ptr(i) + cols);
      }
    }
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, rows, cols](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      std::size_t out_rows2 = (rows + 1) / 2;
      for (std::size_t i = 0; i < out_rows2; ++i) {
        const Scalar* src = g.row_ptr(i);
        Scalar* d0 = ga.row_ptr(2 * i);
        for (std::size_t k = 0; k < cols; ++k) d0[k] += src[k];
        if (2 * i + 1 < rows) {
          Scalar* d1 = ga.row_ptr(2 * i + 1);
          for (std::size_t k = 0; k < cols; ++k) d1[k] += src[cols + k];
        }
      }
    });
    return v;
  }

  // Zeroes all rows at index >= start (used to keep padded frames inert).
  Var zero_rows_from(Var a, std::size_t start) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 2) throw DimensionError("zero_rows_from: matrix expected");
    Tensor<Scalar> out = ta;
    for (std::size_t i = start; i < ta.shape[0]; ++i)
      std::fill(out.row_ptr(i), out.row_ptr(i) + ta.shape[1], Scalar(0));
    Var v = make_node(std::move(out), {a});
    std::size_t cols = ta.shape[1];
    set_backward(v, [this, v, a, start, cols](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      std::size_t lim = std::min(start, g.shape[0]);
      for (std::size_t i = 0; i < lim; ++i) {
        const Scalar* src = g.row_ptr(i);
        Scalar* dst = ga.row_ptr(i);
        for (std::size_t k = 0; k < cols; ++k) dst[k] += src[k];
      }
    });
    return v;
  }

  // Zeroes all time frames at index >= start of a (C, T, F) activation.
  Var zero_time_from(Var a, std::size_t start) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 3) throw DimensionError("zero_time_from: 3-D expected");
    std::size_t C = ta.shape[0], T = ta.shape[1], F = ta.shape[2];
    Tensor<Scalar> out = ta;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = start; t < T; ++t)
        std::fill(&out.at(c, t, 0), &out.at(c, t, 0) + F, Scalar(0));
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, start, C, T, F](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      std::size_t lim = std::min(start, T);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t tt = 0; tt < lim; ++tt) {
          const Scalar* src = &g.at(c, tt, 0);
          Scalar* dst = &ga.at(c, tt, 0);
          for (std::size_t f = 0; f < F; ++f) dst[f] += src[f];
        }
    });
    return v;
  }

  // (C, T, F) -> (T, C*F): per-timestep feature vectors for the encoder.
  Var channels_to_time_major(Var a) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 3) throw DimensionError("channels_to_time_major: 3-D expected");
    std::size_t C = ta.shape[0], T = ta.shape[1], F = ta.shape[2];
    Tensor<Scalar> out(std::vector<std::size_t>{T, C * F});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t)
        std::copy(&ta.at(c, t, 0), &ta.at(c, t, 0) + F, out.row_ptr(t) + c * F);
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, C, T, F](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t tt = 0; tt < T; ++tt) {
          const Scalar* src = g.row_ptr(tt) + c * F;
          Scalar* dst = &ga.at(c, tt, 0);
          for (std::size_t f = 0; f < F; ++f) dst[f] += src[f];
        }
    });
    return v;
  }

  Var transpose(Var a) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.rank() != 2) throw DimensionError("transpose: matrix expected");
    std::size_t r = ta.shape[0], c = ta.shape[1];
    Tensor<Scalar> out(std::vector<std::size_t>{c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(j, i) = ta.at(i, j);
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, r, c](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += g.at(j, i);
    });
    return v;
  }

  // ---- matmul --------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor<Scalar>& ta = val(a);
    const Tensor<Scalar>& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
      throw DimensionError(strcat_msg("matmul: incompatible shapes ", shape_str(ta),
                                      " x ", shape_str(tb)));
    }
    std::size_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor<Scalar> out(std::vector<std::size_t>{m, n});
    matmul_acc(out.data.data(), ta.data.data(), tb.data.data(), m, k, n, false, false);
    Var v = make_node(std::move(out), {a, b});
    set_backward(v, [this, v, a, b, m, k, n](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      if (t.needs_grad(a)) {
        // dA = dC * B^T
        matmul_acc(t.grad(a).data.data(), g.data.data(), t.val(b).data.data(), m, n, k,
                   false, true);
      }
      if (t.needs_grad(b)) {
        // dB = A^T * dC
        matmul_acc(t.grad(b).data.data(), t.val(a).data.data(), g.data.data(), k, m, n,
                   true, false);
      }
    });
    return v;
  }

  // y = W x + b for a vector x; the workhorse of the projection heads.
  Var linear(Var w, Var x, Var b) {
    const Tensor<Scalar>& tw = val(w);
    const Tensor<Scalar>& tx = val(x);
    const Tensor<Scalar>& tb = val(b);
    if (tw.rank() != 2 || tw.shape[1] != tx.numel() || tb.numel() != tw.shape[0]) {
      throw DimensionError(strcat_msg("linear: W", shape_str(tw), " x", shape_str(tx),
                                      " b", shape_str(tb)));
    }
    std::size_t rows = tw.shape[0], cols = tw.shape[1];
    Tensor<Scalar> out(std::vector<std::size_t>{rows});
    for (std::size_t r = 0; r < rows; ++r) {
      out.data[r] = static_cast<Scalar>(
          static_cast<double>(tb.data[r]) +
          detail::dot(tw.data.data() + r * cols, tx.data.data(), cols));
    }
    Var v = make_node(std::move(out), {w, x, b});
    set_backward(v, [this, v, w, x, b, rows, cols](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      const Tensor<Scalar>& tw2 = t.val(w);
      const Tensor<Scalar>& tx2 = t.val(x);
      if (t.needs_grad(x)) {
        Tensor<Scalar>& gx = t.grad(x);
        for (std::size_t r = 0; r < rows; ++r)
          detail::axpy(gx.data.data(), static_cast<double>(g.data[r]),
                       tw2.data.data() + r * cols, cols);
      }
      if (t.needs_grad(w)) {
        Tensor<Scalar>& gw = t.grad(w);
        for (std::size_t r = 0; r < rows; ++r)
          detail::axpy(gw.data.data() + r * cols, static_cast<double>(g.data[r]),
                       tx2.data.data(), cols);
      }
      if (t.needs_grad(b)) {
        Tensor<Scalar>& gb = t.grad(b);
        for (std::size_t r = 0; r < rows; ++r) gb.data[r] += g.data[r];
      }
    });
    return v;
  }

  // ---- softmax ---------------------------------------------------------------

  // Numerically stable softmax over a 1-D node.
  Var softmax(Var a) {
    const Tensor<Scalar>& ta = val(a);
    if (ta.numel() == 0) throw DimensionError("softmax: empty input");
    Tensor<Scalar> out;
    out.shape = ta.shape;
    out.data.resize(ta.numel());
    softmax_inplace(out.data.data(), ta.data.data(), ta.numel());
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& y = t.val(v);
      const Tensor<Scalar>& g = t.grad(v);
      Tensor<Scalar>& ga = t.grad(a);
      double dot_gy = 0;
      for (std::size_t i = 0; i < y.numel(); ++i)
        dot_gy += static_cast<double>(g.data[i]) * y.data[i];
      for (std::size_t i = 0; i < y.numel(); ++i)
        ga.data[i] += static_cast<Scalar>(y.data[i] * (static_cast<double>(g.data[i]) - dot_gy));
    });
    return v;
  }

  static void softmax_inplace(Scalar* out, const Scalar* in, std::size_t n) {
    double mx = -HUGE_VAL;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, static_cast<double>(in[i]));
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = std::exp(static_cast<double>(in[i]) - mx);
      out[i] = static_cast<Scalar>(e);
      z += e;
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Scalar>(out[i] / z);
  }

  // ---- LSTM cell ---------------------------------------------------------------

  // Single LSTM step.  Gate packing along the 4d axis is [input, forget,
  // candidate, output].  Output is a (2, d) tensor: row 0 = h_t, row 1 = c_t.
  Var lstm_cell(Var x, Var h_prev, Var c_prev, Var wx, Var wh, Var b) {
    const Tensor<Scalar>& tx = val(x);
    const Tensor<Scalar>& th = val(h_prev);
    const Tensor<Scalar>& tc = val(c_prev);
    const Tensor<Scalar>& twx = val(wx);
    const Tensor<Scalar>& twh = val(wh);
    const Tensor<Scalar>& tb = val(b);
    std::size_t din = tx.numel();
    std::size_t d = th.numel();
    if (twx.rank() != 2 || twx.shape[0] != 4 * d || twx.shape[1] != din ||
        twh.rank() != 2 || twh.shape[0] != 4 * d || twh.shape[1] != d ||
        tb.numel() != 4 * d || tc.numel() != d) {
      throw DimensionError(strcat_msg("lstm_cell: inconsistent shapes: x", shape_str(tx),
                                      " h", shape_str(th), " wx", shape_str(twx),
                                      " wh", shape_str(twh), " b", shape_str(tb)));
    }
    Tensor<Scalar> gates(std::vector<std::size_t>{4 * d});
    lstm_gates(gates.data.data(), tx.data.data(), th.data.data(), twx.data.data(),
               twh.data.data(), tb.data.data(), din, d);
    Tensor<Scalar> out(std::vector<std::size_t>{2, d});
    for (std::size_t j = 0; j < d; ++j) {
      double gi = gates.data[j], gf = gates.data[d + j];
      double gg = gates.data[2 * d + j], go = gates.data[3 * d + j];
      double c_new = gf * tc.data[j] + gi * gg;
      out.at(1, j) = static_cast<Scalar>(c_new);
      out.at(0, j) = static_cast<Scalar>(go * std::tanh(c_new));
    }
    Var v = make_node(std::move(out), {x, h_prev, c_prev, wx, wh, b});
    if (!nodes_[v].needs_grad) return v;
    set_backward(v, [this, v, x, h_prev, c_prev, wx, wh, b, gates = std::move(gates),
                     din, d](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      const Tensor<Scalar>& outv = t.val(v);
      const Tensor<Scalar>& tc2 = t.val(c_prev);
      std::vector<Scalar> dpre(4 * d);
      std::vector<Scalar> dc_prev_loc(d);
      for (std::size_t j = 0; j < d; ++j) {
        double gi = gates.data[j], gf = gates.data[d + j];
        double gg = gates.data[2 * d + j], go = gates.data[3 * d + j];
        double c_new = outv.at(1, j);
        double th_c = std::tanh(c_new);
        double dh = g.at(0, j);
        double dc = g.at(1, j) + dh * go * (1.0 - th_c * th_c);
        dpre[3 * d + j] = static_cast<Scalar>(dh * th_c * go * (1.0 - go));
        dpre[j] = static_cast<Scalar>(dc * gg * gi * (1.0 - gi));
        dpre[d + j] = static_cast<Scalar>(dc * tc2.data[j] * gf * (1.0 - gf));
        dpre[2 * d + j] = static_cast<Scalar>(dc * gi * (1.0 - gg * gg));
        dc_prev_loc[j] = static_cast<Scalar>(dc * gf);
      }
      lstm_backprop_inputs(t, x, h_prev, c_prev, wx, wh, b, dpre.data(),
                           dc_prev_loc.data(), din, d);
    });
    return v;
  }

  // Shared pieces used by the fused sequence encoder as well.
  static void lstm_gates(Scalar* gates, const Scalar* x, const Scalar* h,
                         const Scalar* wx, const Scalar* wh, const Scalar* b,
                         std::size_t din, std::size_t d) {
    for (std::size_t r = 0; r < 4 * d; ++r) {
      double z = static_cast<double>(b[r]) + detail::dot(wx + r * din, x, din) +
                 detail::dot(wh + r * d, h, d);
      // rows [0,2d) and [3d,4d) are sigmoid gates, [2d,3d) is the candidate
      gates[r] = static_cast<Scalar>((r >= 2 * d && r < 3 * d) ? std::tanh(z)
                                                               : 1.0 / (1.0 + std::exp(-z)));
    }
  }

  void lstm_backprop_inputs(Tape& t, Var x, Var h_prev, Var c_prev, Var wx, Var wh,
                            Var b, const Scalar* dpre, const Scalar* dc_prev_loc,
                            std::size_t din, std::size_t d) {
    const Tensor<Scalar>& tx = t.val(x);
    const Tensor<Scalar>& th = t.val(h_prev);
    const Tensor<Scalar>& twx = t.val(wx);
    const Tensor<Scalar>& twh = t.val(wh);
    if (t.needs_grad(c_prev)) {
      Tensor<Scalar>& gc = t.grad(c_prev);
      for (std::size_t j = 0; j < d; ++j) gc.data[j] += dc_prev_loc[j];
    }
    if (t.needs_grad(x)) {
      Tensor<Scalar>& gx = t.grad(x);
      for (std::size_t r = 0; r < 4 * d; ++r)
        detail::axpy(gx.data.data(), static_cast<double>(dpre[r]),
                     twx.data.data() + r * din, din);
    }
    if (t.needs_grad(h_prev)) {
      Tensor<Scalar>& gh = t.grad(h_prev);
      for (std::size_t r = 0; r < 4 * d; ++r)
        detail::axpy(gh.data.data(), static_cast<double>(dpre[r]),
                     twh.data.data() + r * d, d);
    }
    if (t.needs_grad(wx)) {
      Tensor<Scalar>& gwx = t.grad(wx);
      for (std::size_t r = 0; r < 4 * d; ++r)
        detail::axpy(gwx.data.data() + r * din, static_cast<double>(dpre[r]),
                     tx.data.data(), din);
    }
    if (t.needs_grad(wh)) {
      Tensor<Scalar>& gwh = t.grad(wh);
      for (std::size_t r = 0; r < 4 * d; ++r)
        detail::axpy(gwh.data.data() + r * d, static_cast<double>(dpre[r]),
                     th.data.data(), d);
    }
    if (t.needs_grad(b)) {
      Tensor<Scalar>& gb = t.grad(b);
      for (std::size_t r = 0; r < 4 * d; ++r) gb.data[r] += dpre[r];
    }
  }

  // ---- conv2d ----------------------------------------------------------------

  // Cross-correlation over a (C_in, T, F) input with (C_out, C_in, kt, kf)
  // kernels plus per-channel bias.  Output is (C_out, T', F') with
  // T' = floor((T + 2*pt - kt)/st) + 1 and F' analogously.
  Var conv2d(Var input, Var kernels, Var bias, std::size_t st, std::size_t sf,
             std::size_t pt, std::size_t pf) {
    const Tensor<Scalar>& tin = val(input);
    const Tensor<Scalar>& tk = val(kernels);
    const Tensor<Scalar>& tbias = val(bias);
    if (tin.rank() != 3 || tk.rank() != 4 || tk.shape[1] != tin.shape[0]) {
      throw DimensionError(strcat_msg("conv2d: incompatible input ", shape_str(tin),
                                      " kernels ", shape_str(tk)));
    }
    std::size_t T = tin.shape[1], F = tin.shape[2];
    std::size_t Cout = tk.shape[0], kt = tk.shape[2], kf = tk.shape[3];
    if (kt > T + 2 * pt || kf > F + 2 * pf) {
      throw DimensionError(strcat_msg("conv2d: kernel ", kt, "x", kf,
                                      " exceeds padded input ", T + 2 * pt, "x",
                                      F + 2 * pf));
    }
    if (tbias.numel() != Cout) throw DimensionError("conv2d: bias size mismatch");
    std::size_t To = (T + 2 * pt - kt) / st + 1;
    std::size_t Fo = (F + 2 * pf - kf) / sf + 1;
    Tensor<Scalar> out(std::vector<std::size_t>{Cout, To, Fo});
    conv_forward(out, tin, tk, tbias, st, sf, pt, pf);
    Var v = make_node(std::move(out), {input, kernels, bias});
    set_backward(v, [this, v, input, kernels, bias, st, sf, pt, pf](Tape& t) {
      conv_backward(t, v, input, kernels, bias, st, sf, pt, pf);
    });
    return v;
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    const Tensor<Scalar>* external = nullptr;
    Tensor<Scalar>* grad_sink = nullptr;
    Tensor<Scalar> grad;
    std::function<void(Tape&)> backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;

  static void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                 const char* op) {
    if (!a.same_shape(b)) {
      throw DimensionError(strcat_msg(op, ": shape mismatch ", shape_str(a), " vs ",
                                      shape_str(b)));
    }
  }

  Var binary_elementwise(Var a, Var b, bool sub) {
    const Tensor<Scalar>& ta = val(a);
    const Tensor<Scalar>& tb = val(b);
    require_same_shape(ta, tb, sub ? "sub" : "add");
    Tensor<Scalar> out;
    out.shape = ta.shape;
    out.data.resize(ta.numel());
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = sub ? ta.data[i] - tb.data[i] : ta.data[i] + tb.data[i];
    Var v = make_node(std::move(out), {a, b});
    set_backward(v, [this, v, a, b, sub](Tape& t) {
      const Tensor<Scalar>& g = t.grad(v);
      if (t.needs_grad(a)) {
        Tensor<Scalar>& ga = t.grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
      }
      if (t.needs_grad(b)) {
        Tensor<Scalar>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i)
          gb.data[i] += sub ? -g.data[i] : g.data[i];
      }
    });
    return v;
  }

  template <typename FwdFn, typename BwdFn>
  Var unary(Var a, FwdFn fwd, BwdFn dydx) {
    const Tensor<Scalar>& ta = val(a);
    Tensor<Scalar> out;
    out.shape = ta.shape;
    out.data.resize(ta.numel());
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = static_cast<Scalar>(fwd(static_cast<double>(ta.data[i])));
    Var v = make_node(std::move(out), {a});
    set_backward(v, [this, v, a, dydx](Tape& t) {
      if (!t.needs_grad(a)) return;
      const Tensor<Scalar>& g = t.grad(v);
      const Tensor<Scalar>& x = t.val(a);
      const Tensor<Scalar>& y = t.val(v);
      Tensor<Scalar>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga.data[i] += static_cast<Scalar>(
            static_cast<double>(g.data[i]) *
            dydx(static_cast<double>(x.data[i]), static_cast<double>(y.data[i])));
      }
    });
    return v;
  }

  // C (m x n) += op(A) * op(B); transposition flags select the operand views.
  static void matmul_acc(Scalar* c, const Scalar* a, const Scalar* b, std::size_t m,
                         std::size_t k, std::size_t n, bool at, bool bt) {
    if (!at && !bt) {
      for (std::size_t i = 0; i < m; ++i) {
        Scalar* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          double av = a[i * k + kk];
          if (av == 0) continue;
          const Scalar* brow = b + kk * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += static_cast<Scalar>(av * brow[j]);
        }
      }
    } else if (!at && bt) {
      // B is (n x k) stored row-major; dot rows of A with rows of B.
      for (std::size_t i = 0; i < m; ++i) {
        Scalar* crow = c + i * n;
        const Scalar* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j)
          crow[j] += static_cast<Scalar>(detail::dot(arow, b + j * k, k));
      }
    } else if (at && !bt) {
      // A is (k x m) stored row-major.
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Scalar* arow = a + kk * m;
        const Scalar* brow = b + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
          double av = arow[i];
          if (av == 0) continue;
          Scalar* crow = c + i * n;
          for (std::size_t j = 0; j < n; ++j) crow[j] += static_cast<Scalar>(av * brow[j]);
        }
      }
    } else {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0;
          for (std::size_t kk = 0; kk < k; ++kk) acc += static_cast<double>(a[kk * m + i]) * b[j * k + kk];
          c[i * n + j] += static_cast<Scalar>(acc);
        }
    }
  }

  static void conv_forward(Tensor<Scalar>& out, const Tensor<Scalar>& in,
                           const Tensor<Scalar>& k, const Tensor<Scalar>& bias,
                           std::size_t st, std::size_t sf, std::size_t pt,
                           std::size_t pf) {
    std::size_t Cin = in.shape[0], T = in.shape[1], F = in.shape[2];
    std::size_t Cout = out.shape[0], To = out.shape[1], Fo = out.shape[2];
    std::size_t kt = k.shape[2], kf = k.shape[3];
    for (std::size_t co = 0; co < Cout; ++co) {
      for (std::size_t tp = 0; tp < To; ++tp) {
        Scalar* orow = &out.at(co, tp, 0);
        std::fill(orow, orow + Fo, bias.data[co]);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          for (std::size_t dt = 0; dt < kt; ++dt) {
            std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(st * tp + dt) -
                                static_cast<std::ptrdiff_t>(pt);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
            const Scalar* irow = &in.at(ci, static_cast<std::size_t>(ti), 0);
            const Scalar* krow = k.data.data() + ((co * Cin + ci) * kt + dt) * kf;
            for (std::size_t df = 0; df < kf; ++df) {
              double w = krow[df];
              if (w == 0) continue;
              std::ptrdiff_t base = static_cast<std::ptrdiff_t>(df) -
                                    static_cast<std::ptrdiff_t>(pf);
              for (std::size_t fp = 0; fp < Fo; ++fp) {
                std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(sf * fp) + base;
                if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
                orow[fp] += static_cast<Scalar>(w * irow[fi]);
              }
            }
          }
        }
      }
    }
  }

  void conv_backward(Tape& t, Var v, Var input, Var kernels, Var bias, std::size_t st,
                     std::size_t sf, std::size_t pt, std::size_t pf) {
    const Tensor<Scalar>& g = t.grad(v);
    const Tensor<Scalar>& in = t.val(input);
    const Tensor<Scalar>& k = t.val(kernels);
    std::size_t Cin = in.shape[0], T = in.shape[1], F = in.shape[2];
    std::size_t Cout = g.shape[0], To = g.shape[1], Fo = g.shape[2];
    std::size_t kt = k.shape[2], kf = k.shape[3];
    bool want_in = t.needs_grad(input);
    bool want_k = t.needs_grad(kernels);
    Tensor<Scalar>* gin = want_in ? &t.grad(input) : nullptr;
    Tensor<Scalar>* gk = want_k ? &t.grad(kernels) : nullptr;
    if (t.needs_grad(bias)) {
      Tensor<Scalar>& gb = t.grad(bias);
      for (std::size_t co = 0; co < Cout; ++co) {
        double acc = 0;
        const Scalar* base = &g.at(co, 0, 0);
        for (std::size_t i = 0; i < To * Fo; ++i) acc += static_cast<double>(base[i]);
        gb.data[co] += static_cast<Scalar>(acc);
      }
    }
    if (!want_in && !want_k) return;
    for (std::size_t co = 0; co < Cout; ++co) {
      for (std::size_t tp = 0; tp < To; ++tp) {
        const Scalar* grow = &g.at(co, tp, 0);
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          for (std::size_t dt = 0; dt < kt; ++dt) {
            std::ptrdiff_t ti = static_cast<std::ptrdiff_t>(st * tp + dt) -
                                static_cast<std::ptrdiff_t>(pt);
            if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(T)) continue;
            const Scalar* irow = &in.at(ci, static_cast<std::size_t>(ti), 0);
            Scalar* girow = want_in ? &gin->at(ci, static_cast<std::size_t>(ti), 0) : nullptr;
            const Scalar* krow = k.data.data() + ((co * Cin + ci) * kt + dt) * kf;
            Scalar* gkrow = want_k ? gk->data.data() + ((co * Cin + ci) * kt + dt) * kf
                                   : nullptr;
            for (std::size_t df = 0; df < kf; ++df) {
              std::ptrdiff_t base = static_cast<std::ptrdiff_t>(df) -
                                    static_cast<std::ptrdiff_t>(pf);
              double w = krow[df];
              double acc = 0;
              for (std::size_t fp = 0; fp < Fo; ++fp) {
                std::ptrdiff_t fi = static_cast<std::ptrdiff_t>(sf * fp) + base;
                if (fi < 0 || fi >= static_cast<std::ptrdiff_t>(F)) continue;
                double gv = grow[fp];
                if (want_in) girow[fi] += static_cast<Scalar>(w * gv);
                acc += gv * irow[fi];
              }
              if (want_k) gkrow[df] += static_cast<Scalar>(acc);
            }
          }
        }
      }
    }
  }
};

}  // namespace spectran

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

// Independent reference implementations used as test oracles.  Everything in
// this header is deliberately written as plain nested loops, separate from
// the library's code paths.

#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "spectran/tensor.hpp"

namespace oracle {

using spectran::Tensor;

// Plain triple-loop matrix product.
inline Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b) {
  std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<double> c(std::vector<std::size_t>{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
      c.at(i, j) = acc;
    }
  return c;
}

// Direct nested-loop cross-correlation, single pass over every output cell.
inline Tensor<double> conv2d(const Tensor<double>& in, const Tensor<double>& k,
                             const Tensor<double>& bias, std::size_t st, std::size_t sf,
                             std::size_t pt, std::size_t pf) {
  std::size_t Cin = in.shape[0], T = in.shape[1], F = in.shape[2];
  std::size_t Cout = k.shape[0], kt = k.shape[2], kf = k.shape[3];
  std::size_t To = (T + 2 * pt - kt) / st + 1;
  std::size_t Fo = (F + 2 * pf - kf) / sf + 1;
  Tensor<double> out(std::vector<std::size_t>{Cout, To, Fo});
  for (std::size_t co = 0; co < Cout; ++co)
    for (std::size_t tp = 0; tp < To; ++tp)
      for (std::size_t fp = 0; fp < Fo; ++fp) {
        double acc = bias.data[co];
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t dt = 0; dt < kt; ++dt)
            for (std::size_t df = 0; df < kf; ++df) {
              long ti = static_cast<long>(st * tp + dt) - static_cast<long>(pt);
              long fi = static_cast<long>(sf * fp + df) - static_cast<long>(pf);
              if (ti < 0 || ti >= static_cast<long>(T) || fi < 0 ||
                  fi >= static_cast<long>(F)) {
                continue;
              }
              acc += in.at(ci, ti, fi) *
                     k.data[((co * Cin + ci) * kt + dt) * kf + df];
            }
        out.at(co, tp, fp) = acc;
      }
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop LSTM step, gate order [input, forget, candidate, output].
inline void lstm_step(const std::vector<double>& x, std::vector<double>& h,
                      std::vector<double>& c, const Tensor<double>& wx,
                      const Tensor<double>& wh, const Tensor<double>& b) {
  std::size_t d = h.size(), din = x.size();
  std::vector<double> z(4 * d);
  for (std::size_t r = 0; r < 4 * d; ++r) {
    double acc = b.data[r];
    for (std::size_t i = 0; i < din; ++i) acc += wx.at(r, i) * x[i];
    for (std::size_t i = 0; i < d; ++i) acc += wh.at(r, i) * h[i];
    z[r] = acc;
  }
  std::vector<double> h_new(d), c_new(d);
  for (std::size_t j = 0; j < d; ++j) {
    double gi = sigmoid(z[j]);
    double gf = sigmoid(z[d + j]);
    double gg = std::tanh(z[2 * d + j]);
    double go = sigmoid(z[3 * d + j]);
    c_new[j] = gf * c[j] + gi * gg;
    h_new[j] = go * std::tanh(c_new[j]);
  }
  h = h_new;
  c = c_new;
}

// Quadratic-time DFT for FFT verification.
inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double ang = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(i) /
                   static_cast<double>(n);
      acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  return out;
}

// Direct evaluation of the attention equations: scores via the tanh scorer,
// softmax alignment, context as the alpha-weighted state sum.
struct AttentionOut {
  std::vector<double> alpha;
  std::vector<double> context;
};

inline AttentionOut attention(const std::vector<double>& s, const Tensor<double>& H,
                              const Tensor<double>& W, const Tensor<double>& V,
                              const Tensor<double>& b, const Tensor<double>& w) {
  std::size_t T = H.shape[0], enc = H.shape[1], d_att = w.numel();
  std::vector<double> e(T);
  for (std::size_t j = 0; j < T; ++j) {
    double score = 0;
    for (std::size_t r = 0; r < d_att; ++r) {
      double pre = b.data[r];
      for (std::size_t i = 0; i < s.size(); ++i) pre += W.at(r, i) * s[i];
      for (std::size_t i = 0; i < enc; ++i) pre += V.at(r, i) * H.at(j, i);
      score += w.data[r] * std::tanh(pre);
    }
    e[j] = score;
  }
  double mx = e[0];
  for (double v : e) mx = std::max(mx, v);
  double z = 0;
  AttentionOut out;
  out.alpha.resize(T);
  for (std::size_t j = 0; j < T; ++j) {
    out.alpha[j] = std::exp(e[j] - mx);
    z += out.alpha[j];
  }
  for (double& a : out.alpha) a /= z;
  out.context.assign(enc, 0.0);
  for (std::size_t j = 0; j < T; ++j)
    for (std::size_t i = 0; i < enc; ++i) out.context[i] += out.alpha[j] * H.at(j, i);
  return out;
}

}  // namespace oracle

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

#include <complex>
#include <vector>

#include "spectran/error.hpp"

namespace spectran {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT.  inverse=true applies the conjugate
// transform including the 1/N factor.
inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) {
    throw ConfigError(strcat_msg("fft size must be a power of two, got ", n));
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Real-input FFT keeping bins [0, n/2].
inline std::vector<std::complex<double>> rfft(const std::vector<double>& x,
                                              std::size_t n) {
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < n; ++i)
    buf[i] = std::complex<double>(i < x.size() ? x[i] : 0.0, 0.0);
  fft_radix2(buf, false);
  buf.resize(n / 2 + 1);
  return buf;
}

// Inverse of rfft: reconstructs the conjugate-symmetric spectrum and returns
// the real time signal of length n.
inline std::vector<double> irfft(const std::vector<std::complex<double>>& half,
                                 std::size_t n) {
  if (half.size() != n / 2 + 1) {
    throw DimensionError(strcat_msg("irfft: expected ", n / 2 + 1, " bins, got ",
                                    half.size()));
  }
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i <= n / 2; ++i) buf[i] = half[i];
  for (std::size_t i = n / 2 + 1; i < n; ++i) buf[i] = std::conj(half[n - i]);
  fft_radix2(buf, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
  return out;
}

}  // namespace spectran

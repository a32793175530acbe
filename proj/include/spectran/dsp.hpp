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
#include <complex>
#include <cstdint>
#include <vector>

#include "spectran/error.hpp"
#include "spectran/fft.hpp"
#include "spectran/rng.hpp"
#include "spectran/tensor.hpp"

namespace spectran {

// Fixed analysis parameters: 16 kHz audio, 50 ms Hann window, 12.5 ms hop,
// 1024-point FFT giving 513 linear-frequency bins.
constexpr int kSampleRate = 16000;
constexpr std::size_t kWindowSize = 800;
constexpr std::size_t kHopSize = 200;
constexpr std::size_t kFftSize = 1024;
constexpr std::size_t kFreqBins = kFftSize / 2 + 1;

constexpr double kFloorDb = -100.0;
constexpr double kCeilDb = 20.0;
constexpr double kLogEps = 1e-6;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }

  double peak() const {
    double m = 0;
    for (double s : samples) m = std::max(m, std::abs(s));
    return m;
  }

  // Scales the signal so the largest magnitude is 1 (no-op on silence).
  void peak_normalize() {
    double m = peak();
    if (m > 0) {
      for (double& s : samples) s /= m;
    }
  }
};

// Normalized log-magnitude frames in [0, 1], one row per analysis frame.
struct Spectrogram {
  Tensor<double> frames;  // T x F
  std::size_t frame_hop = kHopSize;
  std::size_t window_size = kWindowSize;
  double floor_db = kFloorDb;
  double ceil_db = kCeilDb;

  std::size_t num_frames() const { return frames.shape.empty() ? 0 : frames.shape[0]; }
  std::size_t num_bins() const { return frames.rank() < 2 ? 0 : frames.shape[1]; }
};

struct QuantizedSpectrogram {
  Tensor<std::int32_t> bins;  // T x F
  std::size_t num_levels = 256;
};

using ComplexFrames = std::vector<std::vector<std::complex<double>>>;  // T x F

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / n));
  return w;
}

// Windowed DFT frames.  The signal is zero-padded on the right to a whole
// number of frames: T = 1 + floor((len - window)/hop) after padding.
inline ComplexFrames stft(const Waveform& w, std::size_t window_size = kWindowSize,
                          std::size_t hop = kHopSize, std::size_t fft_size = kFftSize) {
  if (w.samples.empty()) throw DimensionError("stft: empty signal");
  if (hop > window_size || window_size > fft_size) {
    throw ConfigError(strcat_msg("stft: need hop <= window <= fft_size, got ", hop,
                                 "/", window_size, "/", fft_size));
  }
  if (!is_power_of_two(fft_size)) {
    throw ConfigError(strcat_msg("stft: fft_size must be a power of two, got ", fft_size));
  }
  std::size_t len = w.samples.size();
  std::size_t padded = window_size;
  if (len > window_size) {
    std::size_t tail = len - window_size;
    padded = window_size + ((tail + hop - 1) / hop) * hop;
  }
  std::size_t frames = 1 + (padded - window_size) / hop;
  std::vector<double> window = hann_window(window_size);
  ComplexFrames out(frames);
  std::vector<double> buf(window_size);
  for (std::size_t m = 0; m < frames; ++m) {
    std::size_t start = m * hop;
    for (std::size_t i = 0; i < window_size; ++i) {
      double s = (start + i < len) ? w.samples[start + i] : 0.0;
      buf[i] = s * window[i];
    }
    out[m] = rfft(buf, fft_size);
  }
  return out;
}

// Least-squares overlap-add inverse: synthesis window times each inverse DFT
// frame, normalized by the summed squared window.
inline Waveform istft(const ComplexFrames& frames, std::size_t window_size = kWindowSize,
                      std::size_t hop = kHopSize, std::size_t fft_size = kFftSize) {
  if (frames.empty()) throw DimensionError("istft: no frames");
  if (hop * 4 != window_size) {
    throw ConfigError(strcat_msg("istft: hop must be window/4 for COLA, got hop=", hop,
                                 " window=", window_size));
  }
  std::size_t T = frames.size();
  std::size_t len = window_size + (T - 1) * hop;
  std::vector<double> window = hann_window(window_size);
  std::vector<double> acc(len, 0.0);
  std::vector<double> norm(len, 0.0);
  for (std::size_t m = 0; m < T; ++m) {
    if (frames[m].size() != fft_size / 2 + 1) {
      throw DimensionError(strcat_msg("istft: frame ", m, " has ", frames[m].size(),
                                      " bins, expected ", fft_size / 2 + 1));
    }
    std::vector<double> time = irfft(frames[m], fft_size);
    std::size_t start = m * hop;
    for (std::size_t i = 0; i < window_size; ++i) {
      acc[start + i] += window[i] * time[i];
      norm[start + i] += window[i] * window[i];
    }
  }
  Waveform out;
  out.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i)
    out.samples[i] = norm[i] > 1e-12 ? acc[i] / norm[i] : 0.0;
  return out;
}

inline Tensor<double> magnitude_of(const ComplexFrames& frames) {
  std::size_t T = frames.size();
  std::size_t F = T ? frames[0].size() : 0;
  Tensor<double> mag(std::vector<std::size_t>{T, F});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) mag.at(t, f) = std::abs(frames[t][f]);
  return mag;
}

inline double normalize_db(double mag, double floor_db = kFloorDb,
                           double ceil_db = kCeilDb) {
  double db = 20.0 * std::log10(mag + kLogEps);
  db = std::clamp(db, floor_db, ceil_db);
  return (db - floor_db) / (ceil_db - floor_db);
}

inline double denormalize_db(double v, double floor_db = kFloorDb,
                             double ceil_db = kCeilDb) {
  double db = floor_db + v * (ceil_db - floor_db);
  return std::max(0.0, std::pow(10.0, db / 20.0) - kLogEps);
}

// |STFT| -> dB -> clamp [-100, 20] -> affine map onto [0, 1].
inline Spectrogram to_spectrogram(const Waveform& w) {
  ComplexFrames cf = stft(w);
  Tensor<double> mag = magnitude_of(cf);
  Spectrogram spec;
  spec.frames = Tensor<double>(std::vector<std::size_t>{mag.shape[0], mag.shape[1]});
  for (std::size_t i = 0; i < mag.numel(); ++i)
    spec.frames.data[i] = normalize_db(mag.data[i]);
  return spec;
}

inline Tensor<double> spectrogram_to_linear(const Spectrogram& s) {
  Tensor<double> lin;
  lin.shape = s.frames.shape;
  lin.data.resize(s.frames.numel());
  for (std::size_t i = 0; i < lin.data.size(); ++i)
    lin.data[i] = denormalize_db(s.frames.data[i], s.floor_db, s.ceil_db);
  return lin;
}

struct GriffinLimResult {
  Waveform wave;
  // Spectral convergence ||  |STFT(x)| - mag ||_F / ||mag||_F after each
  // iteration; non-increasing by construction of the least-squares inverse.
  std::vector<double> convergence;
};

// Phase recovery on a linear-magnitude target (T x F).
inline GriffinLimResult griffin_lim_linear(const Tensor<double>& mag,
                                           std::size_t iterations,
                                           bool random_phase = false,
                                           std::uint64_t seed = 0) {
  if (iterations < 1) throw ConfigError("griffin_lim: iterations must be >= 1");
  if (mag.rank() != 2 || mag.shape[1] != kFreqBins) {
    throw DimensionError(strcat_msg("griffin_lim: magnitude must be Tx", kFreqBins,
                                    ", got ", shape_str(mag)));
  }
  std::size_t T = mag.shape[0], F = mag.shape[1];
  double mag_norm = 0;
  for (double v : mag.data) mag_norm += v * v;
  mag_norm = std::sqrt(mag_norm);

  GriffinLimResult res;
  res.convergence.assign(iterations, 0.0);
  if (mag_norm == 0.0) {
    res.wave.samples.assign(kWindowSize + (T - 1) * kHopSize, 0.0);
    return res;
  }

  ComplexFrames target(T, std::vector<std::complex<double>>(F));
  Rng rng(derive_seed(seed, "griffin-lim-phase"));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      double phase = random_phase ? rng.uniform(0.0, 2.0 * M_PI) : 0.0;
      target[t][f] = std::polar(mag.at(t, f), phase);
    }
  }

  Waveform x = istft(target);
  for (std::size_t it = 0; it < iterations; ++it) {
    ComplexFrames s = stft(x);
    double err = 0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        double d = std::abs(s[t][f]) - mag.at(t, f);
        err += d * d;
      }
    }
    res.convergence[it] = std::sqrt(err) / mag_norm;
    if (it + 1 == iterations) break;
    ComplexFrames next(T, std::vector<std::complex<double>>(F));
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        double a = std::abs(s[t][f]);
        next[t][f] = a > 0 ? s[t][f] / a * mag.at(t, f)
                           : std::complex<double>(mag.at(t, f), 0.0);
      }
    }
    x = istft(next);
  }
  x.peak_normalize();
  res.wave = std::move(x);
  return res;
}

// Phase recovery from a normalized spectrogram; denormalizes first.
inline GriffinLimResult griffin_lim(const Spectrogram& spec, std::size_t iterations,
                                    bool random_phase = false, std::uint64_t seed = 0) {
  return griffin_lim_linear(spectrogram_to_linear(spec), iterations, random_phase, seed);
}

// Uniform quantizer over [0, 1]: bin = min(floor(v*K), K-1).
inline QuantizedSpectrogram quantize(const Spectrogram& s, std::size_t K = 256) {
  if (K < 2) throw ConfigError(strcat_msg("quantize: need K >= 2, got ", K));
  QuantizedSpectrogram q;
  q.num_levels = K;
  q.bins.shape = s.frames.shape;
  q.bins.data.resize(s.frames.numel());
  for (std::size_t i = 0; i < s.frames.numel(); ++i) {
    double v = s.frames.data[i];
    if (v < 0.0 || v > 1.0) {
      throw DataError(strcat_msg("quantize: value ", v, " outside [0,1] at index ", i));
    }
    auto bin = static_cast<std::int64_t>(std::floor(v * static_cast<double>(K)));
    q.bins.data[i] = static_cast<std::int32_t>(
        std::min<std::int64_t>(bin, static_cast<std::int64_t>(K) - 1));
  }
  return q;
}

// Bin centers: v = (bin + 0.5)/K.
inline Spectrogram dequantize(const QuantizedSpectrogram& q) {
  Spectrogram s;
  s.frames.shape = q.bins.shape;
  s.frames.data.resize(q.bins.numel());
  for (std::size_t i = 0; i < q.bins.numel(); ++i) {
    s.frames.data[i] =
        (static_cast<double>(q.bins.data[i]) + 0.5) / static_cast<double>(q.num_levels);
  }
  return s;
}

}  // namespace spectran

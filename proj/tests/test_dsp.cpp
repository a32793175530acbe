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
#include "spectran/dsp.hpp"

using namespace spectran;

namespace {

Waveform random_wave(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& s : w.samples) s = rng.uniform(-0.9, 0.9);
  return w;
}

Waveform sinusoid(double freq, std::size_t n, double amp = 1.0) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / kSampleRate);
  }
  return w;
}

}  // namespace

TEST_CASE("fft matches quadratic DFT oracle") {
  Rng rng(5);
  std::vector<double> x(64);
  for (auto& v : x) v = rng.uniform(-1, 1);
  auto got = rfft(x, 64);
  auto want = oracle::dft(x);
  for (std::size_t k = 0; k <= 32; ++k) {
    REQUIRE(got[k].real() == Catch::Approx(want[k].real()).margin(1e-10));
    REQUIRE(got[k].imag() == Catch::Approx(want[k].imag()).margin(1e-10));
  }
}

TEST_CASE("fft size must be a power of two") {
  std::vector<std::complex<double>> buf(48);
  REQUIRE_THROWS_AS(fft_radix2(buf, false), ConfigError);
}

TEST_CASE("stft of silence is all-zero magnitudes") {
  Waveform w;
  w.samples.assign(4000, 0.0);
  auto frames = stft(w);
  for (const auto& row : frames) {
    for (const auto& c : row) REQUIRE(std::abs(c) == 0.0);
  }
}

TEST_CASE("stft frame count follows the padding rule") {
  Waveform w = random_wave(1, 800);
  REQUIRE(stft(w).size() == 1);
  w.samples.resize(801);
  REQUIRE(stft(w).size() == 2);  // padded up to one extra hop
  w.samples.resize(800 + 200 * 5);
  REQUIRE(stft(w).size() == 6);
  w.samples.resize(100);  // shorter than one window
  REQUIRE(stft(w).size() == 1);
}

TEST_CASE("stft empty signal is a dimension error") {
  Waveform w;
  REQUIRE_THROWS_AS(stft(w), DimensionError);
}

TEST_CASE("bin-centered sinusoid peaks at its bin on interior frames") {
  const std::size_t bin = 64;  // 1000 Hz at 16 kHz / 1024
  double freq = static_cast<double>(bin) * kSampleRate / kFftSize;
  Waveform w = sinusoid(freq, 16000);
  auto frames = stft(w);
  for (std::size_t t = 1; t + 1 < frames.size(); ++t) {
    std::size_t argmax = 0;
    double best = -1;
    for (std::size_t f = 0; f < frames[t].size(); ++f) {
      if (std::abs(frames[t][f]) > best) {
        best = std::abs(frames[t][f]);
        argmax = f;
      }
    }
    REQUIRE(argmax == bin);
  }
}

TEST_CASE("istft rejects non-COLA hop") {
  Waveform w = random_wave(2, 4000);
  auto frames = stft(w);
  REQUIRE_THROWS_AS(istft(frames, kWindowSize, 300), ConfigError);
}

TEST_CASE("istft of a zero matrix is a zero signal") {
  ComplexFrames frames(4, std::vector<std::complex<double>>(kFreqBins, {0.0, 0.0}));
  Waveform w = istft(frames);
  for (double s : w.samples) REQUIRE(s == 0.0);
}

TEST_CASE("single-frame istft is the normalized windowed inverse DFT") {
  Waveform w = random_wave(3, kWindowSize);
  auto frames = stft(w);
  REQUIRE(frames.size() == 1);
  Waveform back = istft(frames);
  std::vector<double> window = hann_window(kWindowSize);
  std::vector<double> time = irfft(frames[0], kFftSize);
  for (std::size_t i = 0; i < kWindowSize; ++i) {
    double want = window[i] * window[i] > 1e-12 ? time[i] / window[i] : 0.0;
    REQUIRE(back.samples[i] == Catch::Approx(want).margin(1e-9));
  }
}

TEST_CASE("stft/istft round trip reproduces the signal (100 random signals)") {
  // RMS measured on the COLA-valid interior (outside the first/last window,
  // where the overlapped window-square sum is partial).
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    std::size_t n = 2400 + 200 * (seed % 7);
    Waveform w = random_wave(seed, n);
    Waveform back = istft(stft(w));
    REQUIRE(back.samples.size() >= w.samples.size());
    double err = 0;
    std::size_t count = 0;
    for (std::size_t i = kWindowSize; i + kWindowSize < w.samples.size(); ++i) {
      double d = back.samples[i] - w.samples[i];
      err += d * d;
      ++count;
    }
    REQUIRE(count > 0);
    REQUIRE(std::sqrt(err / count) < 1e-6);
  }
}

TEST_CASE("to_spectrogram of silence is the floor") {
  Waveform w;
  w.samples.assign(4000, 0.0);
  Spectrogram s = to_spectrogram(w);
  for (double v : s.frames.data) REQUIRE(v == 0.0);
}

TEST_CASE("to_spectrogram stays exactly in [0,1] and peaks above 0.9 on a tone") {
  Waveform tone = sinusoid(64.0 * kSampleRate / kFftSize, 16000, 1.0);
  Spectrogram s = to_spectrogram(tone);
  double peak = 0;
  for (double v : s.frames.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    peak = std::max(peak, v);
  }
  // Oracle: apply the documented formula to the known windowed magnitude of a
  // full-scale bin-centered tone (half the window sum).
  std::vector<double> window = hann_window(kWindowSize);
  double wsum = 0;
  for (double v : window) wsum += v;
  double expected = normalize_db(0.5 * wsum);
  REQUIRE(expected > 0.9);
  REQUIRE(peak == Catch::Approx(expected).margin(1e-6));
}

TEST_CASE("normalization round trip is identity on in-range values") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    double v = rng.next_double();
    REQUIRE(normalize_db(denormalize_db(v)) == Catch::Approx(v).margin(1e-9));
  }
}

TEST_CASE("griffin_lim of silence returns zeros immediately") {
  Tensor<double> mag = Tensor<double>::zeros({6, kFreqBins});
  GriffinLimResult r = griffin_lim_linear(mag, 10);
  REQUIRE(r.convergence.size() == 10);
  for (double c : r.convergence) REQUIRE(c == 0.0);
  for (double s : r.wave.samples) REQUIRE(s == 0.0);
}

TEST_CASE("griffin_lim convergence is non-increasing on random magnitudes") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    Tensor<double> mag(std::vector<std::size_t>{5, kFreqBins});
    for (auto& v : mag.data) v = rng.uniform(0.0, 2.0);
    GriffinLimResult r = griffin_lim_linear(mag, 20);
    for (std::size_t i = 1; i < r.convergence.size(); ++i) {
      REQUIRE(r.convergence[i] <= r.convergence[i - 1] + 1e-9);
    }
  }
}

TEST_CASE("griffin_lim recovers a two-tone magnitude below 1e-2") {
  Waveform two = sinusoid(500.0, 1600, 0.6);
  Waveform high = sinusoid(2300.0, 1600, 0.4);
  for (std::size_t i = 0; i < two.samples.size(); ++i) two.samples[i] += high.samples[i];
  Tensor<double> mag = magnitude_of(stft(two));
  GriffinLimResult r = griffin_lim_linear(mag, 100);
  REQUIRE(r.convergence.back() < 1e-2);
  REQUIRE(r.convergence.back() <= r.convergence.front());
  REQUIRE(r.wave.peak() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("quantize boundaries and midpoint") {
  Spectrogram s;
  s.frames = Tensor<double>::from_values({1, 3}, {0.0, 1.0, 0.5});
  QuantizedSpectrogram q = quantize(s, 256);
  REQUIRE(q.bins.data[0] == 0);
  REQUIRE(q.bins.data[1] == 255);
  REQUIRE(q.bins.data[2] == 128);
}

TEST_CASE("dequantize bin centers") {
  QuantizedSpectrogram q;
  q.num_levels = 256;
  q.bins = Tensor<std::int32_t>{std::vector<std::size_t>{1, 2}};
  q.bins.data = {0, 255};
  Spectrogram s = dequantize(q);
  REQUIRE(s.frames.data[0] == Catch::Approx(0.001953125).margin(0));
  REQUIRE(s.frames.data[1] == Catch::Approx(0.998046875).margin(0));
}

TEST_CASE("quantizer round trip within half a bin and idempotent") {
  const std::size_t K = 256;
  Spectrogram s;
  std::size_t n = 20001;
  s.frames = Tensor<double>{std::vector<std::size_t>{1, n}};
  for (std::size_t i = 0; i < n; ++i)
    s.frames.data[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  QuantizedSpectrogram q1 = quantize(s, K);
  Spectrogram d1 = dequantize(q1);
  QuantizedSpectrogram q2 = quantize(d1, K);
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(std::abs(s.frames.data[i] - d1.frames.data[i]) <= 1.0 / (2.0 * K));
    REQUIRE(q1.bins.data[i] == q2.bins.data[i]);
  }
}

TEST_CASE("quantize rejects out-of-range values and tiny K") {
  Spectrogram s;
  s.frames = Tensor<double>::from_values({1, 1}, {1.5});
  REQUIRE_THROWS_AS(quantize(s, 256), DataError);
  s.frames.data[0] = 0.5;
  REQUIRE_THROWS_AS(quantize(s, 1), ConfigError);
}

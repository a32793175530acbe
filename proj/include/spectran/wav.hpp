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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spectran/dsp.hpp"
#include "spectran/error.hpp"

namespace spectran {

// RIFF PCM, 16-bit little-endian, mono, 16 kHz.  Anything else is rejected
// with a descriptive error.

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(std::uint16_t(p[0]) | (std::uint16_t(p[1]) << 8));
}

}  // namespace detail

inline void write_wav(const std::string& path, const Waveform& w) {
  std::string out;
  std::size_t n = w.samples.size();
  std::uint32_t data_bytes = static_cast<std::uint32_t>(n * 2);
  out += "RIFF";
  detail::put_u32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(w.sample_rate * 2));
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits per sample
  out += "data";
  detail::put_u32(out, data_bytes);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    auto v = static_cast<std::int16_t>(std::lrint(c * 32767.0));
    detail::put_u16(out, static_cast<std::uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open for writing: ", path));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError(strcat_msg("short write: ", path));
}

inline Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open wav file: ", path));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(strcat_msg(path, ": not a RIFF/WAVE file (expected PCM 16-bit mono ",
                               kSampleRate, " Hz)"));
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  Waveform w;
  bool have_data = false;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::uint32_t size = detail::get_u32(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      throw DataError(strcat_msg(path, ": truncated chunk at offset ", pos));
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(strcat_msg(path, ": fmt chunk too small"));
      format = detail::get_u16(bytes.data() + body);
      channels = detail::get_u16(bytes.data() + body + 2);
      rate = detail::get_u32(bytes.data() + body + 4);
      bits = detail::get_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError(strcat_msg(path, ": data chunk before fmt"));
      if (format != 1 || channels != 1 || bits != 16 ||
          rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw DataError(strcat_msg(
            path, ": unsupported format (format=", format, " channels=", channels,
            " rate=", rate, " bits=", bits, "); expected RIFF PCM 16-bit mono ",
            kSampleRate, " Hz"));
      }
      std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto v = static_cast<std::int16_t>(detail::get_u16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(v) / 32767.0;
      }
      w.sample_rate = static_cast<int>(rate);
      have_data = true;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  if (!have_data) throw DataError(strcat_msg(path, ": no data chunk"));
  return w;
}

}  // namespace spectran

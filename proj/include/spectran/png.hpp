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
#include <fstream>
#include <string>
#include <vector>

#include "spectran/dsp.hpp"
#include "spectran/error.hpp"

namespace spectran {

// Minimal 8-bit grayscale PNG writer.  Pixels go into stored (uncompressed)
// deflate blocks, which keeps the output byte-deterministic and avoids a
// compression dependency.

namespace detail {

inline std::uint32_t crc32_png(const std::uint8_t* data, std::size_t len,
                               std::uint32_t crc = 0xFFFFFFFFu) {
  static std::uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (std::uint32_t n = 0; n < 256; ++n) {
      std::uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[n] = c;
    }
    init = true;
  }
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc;
}

inline void png_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& body) {
  png_be32(out, static_cast<std::uint32_t>(body.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), body.begin(), body.end());
  std::uint32_t crc = crc32_png(out.data() + crc_start, out.size() - crc_start);
  png_be32(out, crc ^ 0xFFFFFFFFu);
}

}  // namespace detail

// rows: height x width grayscale values in [0, 255], row 0 at the top.
inline void write_gray_png(const std::string& path,
                           const std::vector<std::vector<std::uint8_t>>& rows) {
  if (rows.empty() || rows[0].empty()) throw DimensionError("write_gray_png: empty image");
  std::size_t height = rows.size(), width = rows[0].size();

  // Raw scanlines with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width + 1));
  for (const auto& r : rows) {
    if (r.size() != width) throw DimensionError("write_gray_png: ragged rows");
    raw.push_back(0);
    raw.insert(raw.end(), r.begin(), r.end());
  }

  // zlib stream with stored deflate blocks (max 65535 bytes each).
  std::vector<std::uint8_t> z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t off = 0;
  while (off < raw.size()) {
    std::size_t n = std::min<std::size_t>(65535, raw.size() - off);
    bool last = off + n == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<std::uint8_t>(n & 0xFF));
    z.push_back(static_cast<std::uint8_t>(n >> 8));
    z.push_back(static_cast<std::uint8_t>(~n & 0xFF));
    z.push_back(static_cast<std::uint8_t>((~n >> 8) & 0xFF));
    z.insert(z.end(), raw.begin() + off, raw.begin() + off + n);
    off += n;
  }
  std::uint32_t s1 = 1, s2 = 0;
  for (std::uint8_t b : raw) {
    s1 = (s1 + b) % 65521;
    s2 = (s2 + s1) % 65521;
  }
  detail::png_be32(z, (s2 << 16) | s1);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<std::uint8_t> ihdr;
  detail::png_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::png_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open for writing: ", path));
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError(strcat_msg("short write: ", path));
}

// Time on the x axis, frequency ascending bottom-up, intensity round(v*255).
inline void write_spectrogram_png(const std::string& path, const Tensor<double>& frames) {
  if (frames.rank() != 2) throw DimensionError("write_spectrogram_png: T x F expected");
  std::size_t T = frames.shape[0], F = frames.shape[1];
  std::vector<std::vector<std::uint8_t>> rows(F, std::vector<std::uint8_t>(T));
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      double v = std::clamp(frames.at(t, f), 0.0, 1.0);
      rows[F - 1 - f][t] = static_cast<std::uint8_t>(std::lrint(v * 255.0));
    }
  }
  write_gray_png(path, rows);
}

}  // namespace spectran

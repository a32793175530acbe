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
#include <filesystem>
#include <fstream>

#include "spectran/png.hpp"
#include "spectran/sha256.hpp"
#include "spectran/wav.hpp"

using namespace spectran;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "spectran_io_test";
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("wav round trip is sample-exact at 16-bit resolution") {
  Rng rng(9);
  Waveform w;
  w.samples.resize(3000);
  for (auto& s : w.samples) s = rng.uniform(-1.0, 1.0);
  fs::path p = temp_dir() / "roundtrip.wav";
  write_wav(p.string(), w);
  Waveform back = read_wav(p.string());
  REQUIRE(back.sample_rate == kSampleRate);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    REQUIRE(back.samples[i] == Catch::Approx(w.samples[i]).margin(1.0 / 32767.0));
  }
}

TEST_CASE("wav reader rejects non-wav bytes with a descriptive error") {
  fs::path p = temp_dir() / "bogus.wav";
  std::ofstream(p) << "this is not audio";
  REQUIRE_THROWS_WITH(read_wav(p.string()),
                      Catch::Matchers::ContainsSubstring("RIFF"));
}

TEST_CASE("wav reader rejects wrong sample rate") {
  Waveform w;
  w.samples.assign(100, 0.1);
  w.sample_rate = 8000;
  fs::path p = temp_dir() / "wrong_rate.wav";
  write_wav(p.string(), w);
  REQUIRE_THROWS_WITH(read_wav(p.string()),
                      Catch::Matchers::ContainsSubstring("rate=8000"));
}

TEST_CASE("png writer emits a well-formed grayscale image") {
  std::vector<std::vector<std::uint8_t>> rows(5, std::vector<std::uint8_t>(7));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 7; ++c) rows[r][c] = static_cast<std::uint8_t>(r * 7 + c);
  fs::path p = temp_dir() / "gray.png";
  write_gray_png(p.string(), rows);

  std::ifstream f(p, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  REQUIRE(bytes.size() > 8);
  REQUIRE(std::equal(sig, sig + 8, bytes.begin()));
  // IHDR width=7 height=5, bit depth 8, grayscale.
  REQUIRE(bytes[16 + 3] == 7);
  REQUIRE(bytes[20 + 3] == 5);
  REQUIRE(bytes[24] == 8);
  REQUIRE(bytes[25] == 0);
}

TEST_CASE("spectrogram png puts low frequencies at the bottom") {
  // Single hot cell at t=2, f=0 must land in the last row (bottom).
  Tensor<double> frames = Tensor<double>::zeros({4, 3});
  frames.at(2, 0) = 1.0;
  fs::path p = temp_dir() / "spec.png";
  write_spectrogram_png(p.string(), frames);
  std::ifstream f(p, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  // Stored deflate: raw scanlines start 7 bytes into the IDAT body (zlib
  // header 2 + block header 5); row stride = width+1 filter byte.
  std::size_t idat_body = 8 + 25 + 8;  // signature + IHDR chunk + IDAT len/type
  std::size_t raw0 = idat_body + 7;
  std::size_t width = 4, height = 3;
  std::vector<std::uint8_t> image;
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      image.push_back(bytes[raw0 + r * (width + 1) + 1 + c]);
    }
  }
  REQUIRE(image[(height - 1) * width + 2] == 255);  // bottom row, t=2
  std::size_t nonzero = 0;
  for (auto v : image) nonzero += v != 0;
  REQUIRE(nonzero == 1);
}

TEST_CASE("sha256 known vectors") {
  REQUIRE(Sha256::hex_digest("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  REQUIRE(Sha256::hex_digest("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  REQUIRE(Sha256::hex_digest("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

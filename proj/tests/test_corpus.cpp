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
#include <set>

#include "spectran/corpus.hpp"

using namespace spectran;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "spectran_corpus_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

CorpusConfig tiny_config() {
  CorpusConfig cfg;
  cfg.seed = 77;
  cfg.vocab_size = 8;
  cfg.speakers_low = 2;
  cfg.speakers_high = 1;
  cfg.unigrams = 4;
  cfg.bigrams = 8;
  cfg.trigrams = 2;
  cfg.sentences = 2;
  return cfg;
}

}  // namespace

TEST_CASE("lexicon has one distinct signature per word and language") {
  std::vector<SpeakerProfile> speakers = {make_speaker(5, 0, 1)};
  auto lex = build_lexicon(5, 100, {"a", "b"}, speakers);
  REQUIRE(lex.size() == 200);
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& e : lex) {
    seen.insert({e.language_id, e.word_id});
    double dur = e.waveform.duration_s();
    REQUIRE(dur >= 0.150);
    REQUIRE(dur <= 0.600);
    REQUIRE(e.waveform.peak() <= 1.0);
  }
  REQUIRE(seen.size() == 200);
  // Signatures differ across words (compare a few fundamental frequencies).
  std::set<long> f0s;
  for (std::size_t w = 0; w < 100; ++w) {
    f0s.insert(std::lround(make_signature(5, "a", word_name(w)).f0_hz * 1000));
  }
  REQUIRE(f0s.size() == 100);
}

TEST_CASE("lexicon generation is bit-deterministic in the seed") {
  std::vector<SpeakerProfile> speakers = {make_speaker(9, 0, 1), make_speaker(9, 1, 1)};
  auto a = build_lexicon(9, 5, {"a"}, speakers);
  auto b = build_lexicon(9, 5, {"a"}, speakers);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].waveform.samples == b[i].waveform.samples);
  }
}

TEST_CASE("speaker entries are the documented pitch/gain transform of the signature") {
  const std::uint64_t seed = 31;
  SpeakerProfile s0 = make_speaker(seed, 0, 1);  // low-pitch group
  SpeakerProfile s1 = make_speaker(seed, 2, 1);  // high-pitch group
  REQUIRE(s0.pitch_scale >= 0.8);
  REQUIRE(s0.pitch_scale <= 1.0);
  REQUIRE(s1.pitch_scale >= 1.05);
  REQUIRE(s1.pitch_scale <= 1.25);
  auto lex = build_lexicon(seed, 3, {"a"}, {s0, s1});
  WordSignature sig = make_signature(seed, "a", word_name(1));
  // Oracle: re-apply the stated formula with each speaker's transform.
  for (const SpeakerProfile& spk : {s0, s1}) {
    Waveform want = render_word(sig, spk);
    const LexiconEntry* entry = nullptr;
    for (const auto& e : lex) {
      if (e.word_id == word_name(1) && e.speaker_id == spk.id) entry = &e;
    }
    REQUIRE(entry != nullptr);
    REQUIRE(entry->waveform.samples == want.samples);
  }
}

TEST_CASE("sample_sentences basic contracts") {
  std::vector<SentenceTemplate> templates;
  for (std::size_t L = 5; L <= 10; ++L) {
    for (auto& t : templates_for_length(L, 3)) templates.push_back(t);
  }
  REQUIRE(sample_sentences(3, templates, 0, 5, 10, 20).empty());
  auto pairs = sample_sentences(3, templates, 50, 5, 10, 20);
  REQUIRE(pairs.size() == 50);
  for (const auto& p : pairs) {
    REQUIRE(p.source_words.size() >= 5);
    REQUIRE(p.source_words.size() <= 10);
    // Translation is word-id identity under the template's permutation.
    for (std::size_t k = 0; k < p.target_words.size(); ++k) {
      REQUIRE(p.target_words[k] == p.source_words[p.tmpl->target_order[k]]);
    }
  }
}

TEST_CASE("identity target order copies the translated source order") {
  std::vector<SentenceTemplate> templates = {{{2, 3}, {0, 1}}};
  auto pairs = sample_sentences(11, templates, 10, 2, 2, 10);
  for (const auto& p : pairs) REQUIRE(p.target_words == p.source_words);
}

TEST_CASE("sample_sentences rejects bad length ranges") {
  std::vector<SentenceTemplate> templates = {{{2}, {0}}};
  REQUIRE_THROWS_AS(sample_sentences(1, templates, 1, 0, 1, 5), ConfigError);
  REQUIRE_THROWS_AS(sample_sentences(1, templates, 1, 3, 2, 5), ConfigError);
  REQUIRE_THROWS_AS(sample_sentences(1, templates, 1, 2, 11, 5), ConfigError);
}

TEST_CASE("render_utterance pads a single word with lead and tail silence") {
  SpeakerProfile spk = make_speaker(13, 0, 1);
  RenderedUtterance u = render_utterance({2}, 13, "a", spk, 99, 8);
  std::size_t lead = static_cast<std::size_t>(0.1 * kSampleRate);
  REQUIRE(u.boundaries.size() == 1);
  REQUIRE(u.boundaries[0].begin == lead);
  REQUIRE(u.wave.samples.size() == u.boundaries[0].end + lead);
  for (std::size_t i = 0; i < lead; ++i) REQUIRE(u.wave.samples[i] == 0.0);
}

TEST_CASE("render_utterance duration equals words plus gaps plus lead/tail") {
  SpeakerProfile spk = make_speaker(21, 0, 1);
  RenderedUtterance u = render_utterance({0, 1, 2}, 21, "a", spk, 5, 8);
  REQUIRE(u.boundaries.size() == 3);
  std::size_t lead = static_cast<std::size_t>(0.1 * kSampleRate);
  // Oracle: sum of word spans and gaps from the recorded boundaries.
  std::size_t total = lead;
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(u.boundaries[k].begin >= total);  // gaps are non-negative
    if (k > 0) {
      std::size_t gap = u.boundaries[k].begin - u.boundaries[k - 1].end;
      REQUIRE(gap >= static_cast<std::size_t>(0.05 * kSampleRate));
      REQUIRE(gap <= static_cast<std::size_t>(0.15 * kSampleRate) + 1);
    }
    total = u.boundaries[k].end;
  }
  REQUIRE(u.wave.samples.size() == total + lead);
}

TEST_CASE("render_utterance is bit-deterministic and silence sits between words") {
  SpeakerProfile spk = make_speaker(23, 0, 1);
  RenderedUtterance a = render_utterance({1, 4}, 23, "b", spk, 7, 8);
  RenderedUtterance b = render_utterance({1, 4}, 23, "b", spk, 7, 8);
  REQUIRE(a.wave.samples == b.wave.samples);
  // Everything outside recorded word ranges is exactly zero.
  for (std::size_t i = 0; i < a.wave.samples.size(); ++i) {
    bool inside = false;
    for (const auto& r : a.boundaries) inside |= (i >= r.begin && i < r.end);
    if (!inside) REQUIRE(a.wave.samples[i] == 0.0);
  }
}

TEST_CASE("render_utterance names the missing lexicon entry") {
  SpeakerProfile spk = make_speaker(1, 0, 1);
  REQUIRE_THROWS_WITH(render_utterance({9}, 1, "a", spk, 3, 8),
                      Catch::Matchers::ContainsSubstring("w009") &&
                          Catch::Matchers::ContainsSubstring(spk.id));
}

TEST_CASE("manifest write/read round trip is structurally identical") {
  fs::path dir = fresh_dir("roundtrip");
  CorpusManifest m = generate_corpus(tiny_config(), std::string(64, 'a'), dir.string());
  CorpusManifest back = read_manifest((dir / "manifest.tsv").string());
  REQUIRE(back.seed == m.seed);
  REQUIRE(back.config_hash == m.config_hash);
  REQUIRE(back.vocab == m.vocab);
  REQUIRE(back.speakers == m.speakers);
  REQUIRE(back.records.size() == m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    REQUIRE(back.records[i].id == m.records[i].id);
    REQUIRE(back.records[i].source_words == m.records[i].source_words);
    REQUIRE(back.records[i].target_words == m.records[i].target_words);
    REQUIRE(back.records[i].word_boundaries.size() == m.records[i].word_boundaries.size());
    for (std::size_t k = 0; k < m.records[i].word_boundaries.size(); ++k) {
      REQUIRE(back.records[i].word_boundaries[k].begin ==
              m.records[i].word_boundaries[k].begin);
      REQUIRE(back.records[i].word_boundaries[k].end ==
              m.records[i].word_boundaries[k].end);
    }
  }
}

TEST_CASE("manifest parse errors carry line numbers and field names") {
  fs::path dir = fresh_dir("parse_errors");
  fs::path p = dir / "manifest.tsv";
  {
    std::ofstream f(p);
    f << kManifestMagic << " seed=1 config=ff\n";
    f << "u0\tspk00\ta\tb\tw000\tw000\n";  // missing fields
  }
  REQUIRE_THROWS_WITH(read_manifest(p.string()),
                      Catch::Matchers::ContainsSubstring(":2:") &&
                          Catch::Matchers::ContainsSubstring("source_wav_path"));
  {
    std::ofstream f(p);
    f << kManifestMagic << " config=ff\n";  // no seed
  }
  REQUIRE_THROWS_WITH(read_manifest(p.string()),
                      Catch::Matchers::ContainsSubstring("seed"));
}

TEST_CASE("generated corpus has resolvable paths and recoverable boundaries") {
  fs::path dir = fresh_dir("resolve");
  CorpusConfig cfg = tiny_config();
  cfg.bigrams = 16;
  CorpusManifest m = generate_corpus(cfg, std::string(64, 'b'), dir.string());
  std::size_t bigrams = 0;
  for (const auto& r : m.records) {
    fs::path src = dir / r.source_wav_path;
    fs::path tgt = dir / r.target_wav_path;
    REQUIRE(fs::exists(src));
    REQUIRE(fs::exists(tgt));
    bigrams += r.id.rfind("big", 0) == 0;
    // Boundary positions must frame exact silence in the rendered audio.
    Waveform w = read_wav(src.string());
    std::size_t n_src = r.source_words.size();
    for (std::size_t k = 0; k < n_src; ++k) {
      const WordRange& range = r.word_boundaries[k];
      if (range.begin > 0) REQUIRE(w.samples[range.begin - 1] == 0.0);
      if (range.end < w.samples.size()) REQUIRE(w.samples[range.end] == 0.0);
    }
  }
  REQUIRE(bigrams == 16);
}

TEST_CASE("corpus generation is a pure function of seed and config") {
  fs::path d1 = fresh_dir("det1");
  fs::path d2 = fresh_dir("det2");
  CorpusConfig cfg = tiny_config();
  generate_corpus(cfg, std::string(64, 'c'), d1.string());
  generate_corpus(cfg, std::string(64, 'c'), d2.string(), /*jobs=*/3);
  REQUIRE(file_bytes(d1 / "manifest.tsv") == file_bytes(d2 / "manifest.tsv"));
  CorpusManifest m = read_manifest((d1 / "manifest.tsv").string());
  for (const auto& r : m.records) {
    REQUIRE(file_bytes(d1 / r.source_wav_path) == file_bytes(d2 / r.source_wav_path));
    REQUIRE(file_bytes(d1 / r.target_wav_path) == file_bytes(d2 / r.target_wav_path));
  }
}

TEST_CASE("speaker split shares no utterances between train and test") {
  fs::path dir = fresh_dir("split");
  CorpusManifest m = generate_corpus(tiny_config(), std::string(64, 'd'), dir.string());
  const std::string held = m.speakers[1];
  std::set<std::string> train_ids, test_ids;
  for (const auto& r : m.records) {
    (r.speaker_id == held ? test_ids : train_ids).insert(r.id);
  }
  REQUIRE_FALSE(test_ids.empty());
  for (const auto& id : test_ids) REQUIRE(train_ids.count(id) == 0);
}

TEST_CASE("empty vocab or empty tiers are rejected") {
  CorpusConfig cfg = tiny_config();
  cfg.vocab_size = 0;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.sentence_min = 7;
  cfg.sentence_max = 3;
  REQUIRE_THROWS_AS(cfg.validate(), ConfigError);
}

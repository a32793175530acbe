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
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "spectran/dsp.hpp"
#include "spectran/error.hpp"
#include "spectran/rng.hpp"
#include "spectran/wav.hpp"

namespace spectran {

// Synthetic bilingual word corpus.  Every (word, language) pair has a
// deterministic acoustic signature -- three harmonics of a word-specific
// fundamental shaped by a word-specific envelope -- and each speaker applies
// a fixed pitch scale and gain on top.  Sentences are built by concatenating
// word signatures with silence gaps, which keeps word boundaries exact and
// the whole corpus a pure function of (seed, config).

constexpr double kWordF0Lo = 110.0, kWordF0Hi = 330.0;
constexpr double kWordDurLoMs = 150.0, kWordDurHiMs = 600.0;
constexpr double kGapLoMs = 50.0, kGapHiMs = 150.0;
constexpr double kLeadTailMs = 100.0;
constexpr double kDurationJitter = 0.02;  // +-2% per rendered word instance

struct SpeakerProfile {
  std::string id;
  double pitch_scale = 1.0;  // low-pitch group draws in [0.8, 1.0], high in [1.05, 1.25]
  double gain = 1.0;         // in [0.5, 1.0]
};

struct WordSignature {
  double f0_hz;
  double duration_ms;
  double harmonic_amp[3];
  double attack_frac;
  double release_frac;
  double am_rate_hz;
  double am_depth;
};

struct LexiconEntry {
  std::string word_id;
  std::string language_id;
  std::string speaker_id;
  Waveform waveform;
};

struct SentenceTemplate {
  std::vector<std::size_t> slots;         // part-of-speech class per position
  std::vector<std::size_t> target_order;  // permutation of slot indices

  bool valid_permutation() const {
    std::vector<bool> seen(slots.size(), false);
    if (target_order.size() != slots.size()) return false;
    for (std::size_t i : target_order) {
      if (i >= slots.size() || seen[i]) return false;
      seen[i] = true;
    }
    return true;
  }
};

struct WordRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct UtteranceRecord {
  std::string id;
  std::string speaker_id;
  std::string source_language;
  std::string target_language;
  std::vector<std::string> source_words;
  std::vector<std::string> target_words;
  std::string source_wav_path;
  std::string target_wav_path;
  // Sample ranges for source words followed by target words.
  std::vector<WordRange> word_boundaries;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::string config_hash;  // 64 hex chars
  std::vector<std::string> vocab;
  std::vector<std::string> languages;
  std::vector<std::string> speakers;
  std::vector<UtteranceRecord> records;
};

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::size_t vocab_size = 100;
  std::size_t speakers_low = 8;   // low-pitch group
  std::size_t speakers_high = 4;  // high-pitch group
  std::vector<std::string> languages = {"a", "b"};
  std::size_t unigrams = 32;
  std::size_t bigrams = 32;
  std::size_t trigrams = 32;
  std::size_t sentences = 16;
  std::size_t sentence_min = 5;
  std::size_t sentence_max = 10;

  void validate() const {
    if (vocab_size < 1) throw ConfigError("corpus: vocab_size must be >= 1");
    if (languages.size() < 1) throw ConfigError("corpus: need at least one language");
    if (speakers_low + speakers_high < 1) throw ConfigError("corpus: need at least one speaker");
    if (sentence_min < 1 || sentence_max > 10 || sentence_min > sentence_max) {
      throw ConfigError(strcat_msg("corpus: sentence length range [", sentence_min, ",",
                                   sentence_max, "] must lie within [1,10]"));
    }
  }

  std::size_t num_speakers() const { return speakers_low + speakers_high; }
};

inline std::string word_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%03zu", i);
  return buf;
}

inline std::string speaker_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "spk%02zu", i);
  return buf;
}

inline SpeakerProfile make_speaker(std::uint64_t seed, std::size_t index,
                                   std::size_t speakers_low) {
  Rng rng(derive_seed(seed, "speaker", index));
  SpeakerProfile p;
  p.id = speaker_name(index);
  p.pitch_scale = index < speakers_low ? rng.uniform(0.8, 1.0) : rng.uniform(1.05, 1.25);
  p.gain = rng.uniform(0.5, 1.0);
  return p;
}

inline WordSignature make_signature(std::uint64_t seed, const std::string& language,
                                    const std::string& word) {
  Rng rng(derive_seed(seed, "lex", detail::fnv1a64(language), detail::fnv1a64(word)));
  WordSignature s;
  s.f0_hz = rng.uniform(kWordF0Lo, kWordF0Hi);
  s.duration_ms = rng.uniform(kWordDurLoMs, kWordDurHiMs);
  for (double& a : s.harmonic_amp) a = rng.uniform(0.3, 1.0);
  s.attack_frac = rng.uniform(0.05, 0.3);
  s.release_frac = rng.uniform(0.1, 0.4);
  s.am_rate_hz = rng.uniform(2.0, 8.0);
  s.am_depth = rng.uniform(0.0, 0.5);
  return s;
}

// Renders one word instance.  The canonical entry uses duration_scale = 1;
// per-utterance instances jitter it by up to +-2%.
inline Waveform render_word(const WordSignature& sig, const SpeakerProfile& speaker,
                            double duration_scale = 1.0) {
  std::size_t n = static_cast<std::size_t>(
      std::lround(sig.duration_ms * duration_scale * 1e-3 * kSampleRate));
  Waveform w;
  w.samples.resize(n);
  double f0 = sig.f0_hz * speaker.pitch_scale;
  std::size_t attack = static_cast<std::size_t>(sig.attack_frac * static_cast<double>(n));
  std::size_t release = static_cast<std::size_t>(sig.release_frac * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / kSampleRate;
    double env = 1.0;
    if (attack > 0 && i < attack) env = static_cast<double>(i) / attack;
    if (release > 0 && i >= n - release)
      env = std::min(env, static_cast<double>(n - i) / release);
    double am = 1.0 - sig.am_depth * 0.5 * (1.0 + std::sin(2.0 * M_PI * sig.am_rate_hz * t));
    double v = 0.0;
    for (int k = 0; k < 3; ++k)
      v += sig.harmonic_amp[k] * std::sin(2.0 * M_PI * f0 * (k + 1) * t);
    w.samples[i] = env * am * v;
  }
  w.peak_normalize();
  for (double& s : w.samples) s *= speaker.gain;
  return w;
}

// Materialized lexicon: one canonical signature per (word, language, speaker).
inline std::vector<LexiconEntry> build_lexicon(std::uint64_t seed, std::size_t vocab_size,
                                               const std::vector<std::string>& languages,
                                               const std::vector<SpeakerProfile>& speakers) {
  if (vocab_size < 1) throw ConfigError("build_lexicon: vocab_size must be >= 1");
  if (languages.empty()) throw ConfigError("build_lexicon: need at least one language");
  if (speakers.empty()) throw ConfigError("build_lexicon: need at least one speaker");
  std::vector<LexiconEntry> out;
  out.reserve(vocab_size * languages.size() * speakers.size());
  for (const std::string& lang : languages) {
    for (std::size_t wi = 0; wi < vocab_size; ++wi) {
      WordSignature sig = make_signature(seed, lang, word_name(wi));
      for (const SpeakerProfile& spk : speakers) {
        LexiconEntry e;
        e.word_id = word_name(wi);
        e.language_id = lang;
        e.speaker_id = spk.id;
        e.waveform = render_word(sig, spk);
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

// Part-of-speech classes (determiner/adjective/noun/verb/adverb).  Words are
// assigned round-robin so every class is populated when vocab size allows.
constexpr std::size_t kNumPosClasses = 5;

inline std::size_t pos_of_word(std::size_t word_index, std::size_t vocab_size) {
  return word_index % std::min(vocab_size, kNumPosClasses);
}

inline std::vector<std::size_t> words_of_pos(std::size_t pos, std::size_t vocab_size) {
  std::vector<std::size_t> out;
  std::size_t classes = std::min(vocab_size, kNumPosClasses);
  for (std::size_t i = pos % classes; i < vocab_size; i += classes) out.push_back(i);
  return out;
}

// Fixed template inventory per n-gram tier.  Several templates permute the
// target order so the decoder has to reorder, not just copy.
inline std::vector<SentenceTemplate> templates_for_length(std::size_t len,
                                                          std::uint64_t seed) {
  std::vector<SentenceTemplate> out;
  if (len == 1) {
    // One template per class so every vocabulary word can appear alone.
    for (std::size_t pos = 0; pos < kNumPosClasses; ++pos) out.push_back({{pos}, {0}});
  } else if (len == 2) {
    out.push_back({{1, 2}, {1, 0}});  // adj noun -> noun adj
    out.push_back({{2, 3}, {0, 1}});  // noun verb, same order
  } else if (len == 3) {
    out.push_back({{0, 1, 2}, {2, 0, 1}});  // det adj noun -> noun det adj
    out.push_back({{2, 3, 4}, {1, 0, 2}});  // noun verb adv -> verb noun adv
  } else {
    // Longer sentences: cycle the classes and permute with a seeded shuffle.
    SentenceTemplate t;
    for (std::size_t i = 0; i < len; ++i) t.slots.push_back(i % kNumPosClasses);
    t.target_order.resize(len);
    for (std::size_t i = 0; i < len; ++i) t.target_order[i] = i;
    Rng rng(derive_seed(seed, "template-order", len));
    for (std::size_t i = len; i-- > 1;) {
      std::size_t j = rng.next_below(i + 1);
      std::swap(t.target_order[i], t.target_order[j]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

struct SentencePair {
  const SentenceTemplate* tmpl = nullptr;
  std::vector<std::size_t> source_words;
  std::vector<std::size_t> target_words;  // translated word ids, permuted
};

// Draws n parallel word-sequence pairs from the template inventory.  The
// translation is word-id identity; the target order comes from the template.
inline std::vector<SentencePair> sample_sentences(
    std::uint64_t seed, const std::vector<SentenceTemplate>& templates, std::size_t n,
    std::size_t len_lo, std::size_t len_hi, std::size_t vocab_size) {
  if (len_lo < 1 || len_hi > 10 || len_lo > len_hi) {
    throw ConfigError(strcat_msg("sample_sentences: length range [", len_lo, ",", len_hi,
                                 "] must be a non-empty subset of [1,10]"));
  }
  std::vector<const SentenceTemplate*> pool;
  for (const auto& t : templates) {
    if (!t.valid_permutation()) throw ConfigError("sample_sentences: invalid template permutation");
    if (t.slots.size() >= len_lo && t.slots.size() <= len_hi) pool.push_back(&t);
  }
  if (pool.empty()) {
    throw ConfigError(strcat_msg("sample_sentences: no template with length in [", len_lo,
                                 ",", len_hi, "]"));
  }
  std::vector<SentencePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "sentence", i));
    const SentenceTemplate* t = pool[rng.next_below(pool.size())];
    SentencePair p;
    p.tmpl = t;
    for (std::size_t pos : t->slots) {
      std::vector<std::size_t> cands = words_of_pos(pos, vocab_size);
      p.source_words.push_back(cands[rng.next_below(cands.size())]);
    }
    p.target_words.resize(t->slots.size());
    for (std::size_t k = 0; k < t->slots.size(); ++k)
      p.target_words[k] = p.source_words[t->target_order[k]];
    out.push_back(std::move(p));
  }
  return out;
}

struct RenderedUtterance {
  Waveform wave;
  std::vector<WordRange> boundaries;
};

// Concatenates word instances with seeded silence gaps of 50-150 ms plus
// 100 ms of leading/trailing silence, then peak-normalizes.
inline RenderedUtterance render_utterance(const std::vector<std::size_t>& words,
                                          std::uint64_t corpus_seed,
                                          const std::string& language,
                                          const SpeakerProfile& speaker,
                                          std::uint64_t utterance_seed,
                                          std::size_t vocab_size) {
  for (std::size_t w : words) {
    if (w >= vocab_size) {
      throw DataError(strcat_msg("render_utterance: no lexicon entry for (", word_name(w),
                                 ", ", language, ", ", speaker.id, ")"));
    }
  }
  Rng rng(derive_seed(utterance_seed, "render"));
  std::size_t lead = static_cast<std::size_t>(kLeadTailMs * 1e-3 * kSampleRate);
  RenderedUtterance out;
  out.wave.samples.assign(lead, 0.0);
  for (std::size_t k = 0; k < words.size(); ++k) {
    WordSignature sig = make_signature(corpus_seed, language, word_name(words[k]));
    double jitter = 1.0 + kDurationJitter * (2.0 * rng.next_double() - 1.0);
    Waveform word = render_word(sig, speaker, jitter);
    WordRange r;
    r.begin = out.wave.samples.size();
    out.wave.samples.insert(out.wave.samples.end(), word.samples.begin(),
                            word.samples.end());
    r.end = out.wave.samples.size();
    out.boundaries.push_back(r);
    if (k + 1 < words.size()) {
      double gap_ms = rng.uniform(kGapLoMs, kGapHiMs);
      std::size_t gap = static_cast<std::size_t>(std::lround(gap_ms * 1e-3 * kSampleRate));
      out.wave.samples.insert(out.wave.samples.end(), gap, 0.0);
    }
  }
  out.wave.samples.insert(out.wave.samples.end(), lead, 0.0);
  out.wave.peak_normalize();
  return out;
}

// ---- manifest serialization -------------------------------------------------

namespace detail {

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(sep);
    out += v[i];
  }
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
  return out;
}

}  // namespace detail

constexpr const char* kManifestMagic = "#spectran-manifest v1";

inline void write_manifest(const std::string& path, const CorpusManifest& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open for writing: ", path));
  f << kManifestMagic << " seed=" << m.seed << " config=" << m.config_hash
    << " vocab=" << detail::join(m.vocab, ',')
    << " languages=" << detail::join(m.languages, ',')
    << " speakers=" << detail::join(m.speakers, ',') << "\n";
  for (const auto& r : m.records) {
    std::string bounds;
    for (std::size_t i = 0; i < r.word_boundaries.size(); ++i) {
      if (i) bounds.push_back(';');
      bounds += std::to_string(r.word_boundaries[i].begin);
      bounds.push_back(':');
      bounds += std::to_string(r.word_boundaries[i].end);
    }
    f << r.id << '\t' << r.speaker_id << '\t' << r.source_language << '\t'
      << r.target_language << '\t' << detail::join(r.source_words, ' ') << '\t'
      << detail::join(r.target_words, ' ') << '\t' << r.source_wav_path << '\t'
      << r.target_wav_path << '\t' << bounds << "\n";
  }
  if (!f) throw DataError(strcat_msg("short write: ", path));
}

inline CorpusManifest read_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open manifest: ", path));
  CorpusManifest m;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(f, line)) throw DataError(strcat_msg(path, ": empty manifest"));
  ++lineno;
  if (line.rfind(kManifestMagic, 0) != 0) {
    throw DataError(strcat_msg(path, ":1: bad header (expected '", kManifestMagic, "')"));
  }
  bool have_seed = false, have_hash = false;
  for (const std::string& tok : detail::split(line.substr(std::string(kManifestMagic).size()), ' ')) {
    if (tok.empty()) continue;
    std::size_t eq = tok.find('=');
    if (eq == std::string::npos) {
      throw DataError(strcat_msg(path, ":1: malformed header token '", tok, "'"));
    }
    std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
    if (key == "seed") {
      m.seed = std::strtoull(value.c_str(), nullptr, 10);
      have_seed = true;
    } else if (key == "config") {
      m.config_hash = value;
      have_hash = true;
    } else if (key == "vocab") {
      m.vocab = detail::split(value, ',');
    } else if (key == "languages") {
      m.languages = detail::split(value, ',');
    } else if (key == "speakers") {
      m.speakers = detail::split(value, ',');
    } else {
      throw DataError(strcat_msg(path, ":1: unknown header field '", key, "'"));
    }
  }
  if (!have_seed) throw DataError(strcat_msg(path, ":1: missing required field 'seed'"));
  if (!have_hash) throw DataError(strcat_msg(path, ":1: missing required field 'config'"));
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields = detail::split(line, '\t');
    static const char* kFieldNames[] = {
        "id",          "speaker_id",      "source_language", "target_language",
        "source_words", "target_words",   "source_wav_path", "target_wav_path",
        "word_boundaries"};
    if (fields.size() != 9) {
      std::string missing = fields.size() < 9 ? kFieldNames[fields.size()] : "(extra)";
      throw DataError(strcat_msg(path, ":", lineno, ": expected 9 fields, got ",
                                 fields.size(), "; first missing field: ", missing));
    }
    UtteranceRecord r;
    r.id = fields[0];
    r.speaker_id = fields[1];
    r.source_language = fields[2];
    r.target_language = fields[3];
    r.source_words = detail::split(fields[4], ' ');
    r.target_words = detail::split(fields[5], ' ');
    r.source_wav_path = fields[6];
    r.target_wav_path = fields[7];
    if (r.id.empty()) throw DataError(strcat_msg(path, ":", lineno, ": empty id field"));
    for (const std::string& range : detail::split(fields[8], ';')) {
      if (range.empty()) continue;
      std::size_t colon = range.find(':');
      if (colon == std::string::npos) {
        throw DataError(strcat_msg(path, ":", lineno,
                                   ": malformed word_boundaries range '", range, "'"));
      }
      WordRange wr;
      wr.begin = std::strtoull(range.substr(0, colon).c_str(), nullptr, 10);
      wr.end = std::strtoull(range.substr(colon + 1).c_str(), nullptr, 10);
      r.word_boundaries.push_back(wr);
    }
    if (r.word_boundaries.size() != r.source_words.size() + r.target_words.size()) {
      throw DataError(strcat_msg(path, ":", lineno, ": word_boundaries count ",
                                 r.word_boundaries.size(), " does not match ",
                                 r.source_words.size() + r.target_words.size(), " words"));
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

// ---- corpus generation ---------------------------------------------------------

struct CorpusTier {
  std::string name;
  std::string prefix;
  std::size_t count;
  std::size_t len_lo;
  std::size_t len_hi;
};

inline std::vector<CorpusTier> corpus_tiers(const CorpusConfig& cfg) {
  return {{"unigram", "uni", cfg.unigrams, 1, 1},
          {"bigram", "big", cfg.bigrams, 2, 2},
          {"trigram", "tri", cfg.trigrams, 3, 3},
          {"sentence", "sen", cfg.sentences, cfg.sentence_min, cfg.sentence_max}};
}

// Builds the full corpus under out_dir: one WAV pair per utterance plus the
// manifest.  Utterances derive their own seeds, so rendering distributes over
// jobs threads without affecting the output bytes.
inline CorpusManifest generate_corpus(const CorpusConfig& cfg, const std::string& config_hash,
                                      const std::string& out_dir, std::size_t jobs = 1) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "wav");

  CorpusManifest m;
  m.seed = cfg.seed;
  m.config_hash = config_hash;
  for (std::size_t i = 0; i < cfg.vocab_size; ++i) m.vocab.push_back(word_name(i));
  m.languages = cfg.languages;
  std::vector<SpeakerProfile> speakers;
  for (std::size_t i = 0; i < cfg.num_speakers(); ++i) {
    speakers.push_back(make_speaker(cfg.seed, i, cfg.speakers_low));
    m.speakers.push_back(speakers.back().id);
  }
  const std::string src_lang = cfg.languages[0];
  const std::string tgt_lang = cfg.languages.size() > 1 ? cfg.languages[1] : cfg.languages[0];

  // Plan all utterances first, then render (possibly in parallel).
  struct Plan {
    std::string id;
    std::size_t speaker_index;
    SentencePair pair;
    std::uint64_t useed;
  };
  std::vector<Plan> plans;
  std::size_t tier_id = 0;
  for (const CorpusTier& tier : corpus_tiers(cfg)) {
    std::vector<SentenceTemplate> templates;
    for (std::size_t L = tier.len_lo; L <= tier.len_hi; ++L) {
      for (auto& t : templates_for_length(L, cfg.seed)) templates.push_back(std::move(t));
    }
    std::uint64_t tier_seed = derive_seed(cfg.seed, "tier", tier_id);
    std::vector<SentencePair> pairs =
        sample_sentences(tier_seed, templates, tier.count, tier.len_lo, tier.len_hi,
                         cfg.vocab_size);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      Plan p;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%s%04zu", tier.prefix.c_str(), i);
      p.id = buf;
      p.speaker_index = i % speakers.size();
      p.pair = std::move(pairs[i]);
      p.useed = derive_seed(cfg.seed, "utt", tier_id, i);
      plans.push_back(std::move(p));
    }
    ++tier_id;
  }

  std::vector<UtteranceRecord> records(plans.size());
  auto render_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Plan& p = plans[i];
      const SpeakerProfile& spk = speakers[p.speaker_index];
      RenderedUtterance src = render_utterance(p.pair.source_words, cfg.seed, src_lang,
                                               spk, derive_seed(p.useed, "src"),
                                               cfg.vocab_size);
      RenderedUtterance tgt = render_utterance(p.pair.target_words, cfg.seed, tgt_lang,
                                               spk, derive_seed(p.useed, "tgt"),
                                               cfg.vocab_size);
      UtteranceRecord r;
      r.id = p.id;
      r.speaker_id = spk.id;
      r.source_language = src_lang;
      r.target_language = tgt_lang;
      for (std::size_t w : p.pair.source_words) r.source_words.push_back(word_name(w));
      for (std::size_t w : p.pair.target_words) r.target_words.push_back(word_name(w));
      r.source_wav_path = "wav/" + p.id + "_src.wav";
      r.target_wav_path = "wav/" + p.id + "_tgt.wav";
      r.word_boundaries = src.boundaries;
      r.word_boundaries.insert(r.word_boundaries.end(), tgt.boundaries.begin(),
                               tgt.boundaries.end());
      write_wav((fs::path(out_dir) / r.source_wav_path).string(), src.wave);
      write_wav((fs::path(out_dir) / r.target_wav_path).string(), tgt.wave);
      records[i] = std::move(r);
    }
  };

  if (jobs <= 1 || plans.size() < 2) {
    render_range(0, plans.size());
  } else {
    std::size_t n_threads = std::min(jobs, plans.size());
    std::vector<std::thread> workers;
    std::size_t chunk = (plans.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      std::size_t lo = t * chunk, hi = std::min(plans.size(), lo + chunk);
      if (lo < hi) workers.emplace_back(render_range, lo, hi);
    }
    for (auto& w : workers) w.join();
  }

  m.records = std::move(records);
  write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
  return m;
}

}  // namespace spectran

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

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "spectran/corpus.hpp"
#include "spectran/error.hpp"
#include "spectran/model.hpp"
#include "spectran/sha256.hpp"
#include "spectran/train.hpp"

namespace spectran {

// Flat `key = value` configuration with # comments.  Flags override file
// values; unknown keys are rejected.  The canonical digest is the SHA-256 of
// the sorted key=value lines, so it does not depend on file ordering.

enum class KeyType { kU64, kF64, kBool, kString };

struct ConfigKey {
  const char* name;
  KeyType type;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"seed", KeyType::kU64, "1", "master seed for every random draw"},
      {"corpus.vocab_size", KeyType::kU64, "100", "words per language"},
      {"corpus.speakers_low", KeyType::kU64, "8", "low-pitch speakers"},
      {"corpus.speakers_high", KeyType::kU64, "4", "high-pitch speakers"},
      {"corpus.unigrams", KeyType::kU64, "32", "single-word utterances"},
      {"corpus.bigrams", KeyType::kU64, "32", "two-word utterances"},
      {"corpus.trigrams", KeyType::kU64, "32", "three-word utterances"},
      {"corpus.sentences", KeyType::kU64, "16", "long sentences"},
      {"corpus.sentence_min", KeyType::kU64, "5", "min sentence length"},
      {"corpus.sentence_max", KeyType::kU64, "10", "max sentence length"},
      {"model.use_cnn", KeyType::kBool, "true", "conv front-end on/off"},
      {"model.conv_channels", KeyType::kU64, "8", "conv channels per block"},
      {"model.encoder_dim", KeyType::kU64, "64", "encoder LSTM width"},
      {"model.pyramid_layers", KeyType::kU64, "2", "halving encoder layers"},
      {"model.bidirectional", KeyType::kBool, "true", "bidirectional encoder"},
      {"model.use_attention", KeyType::kBool, "true", "attention on/off"},
      {"model.attention_dim", KeyType::kU64, "64", "attention scorer width"},
      {"model.decoder_dim", KeyType::kU64, "64", "decoder LSTM width"},
      {"model.reduction", KeyType::kU64, "2", "frames emitted per decoder step"},
      {"model.quantize_bins", KeyType::kU64, "0", "classification head bins (0=off)"},
      {"train.lambda_kl", KeyType::kF64, "0", "KL loss coefficient"},
      {"train.lambda_l2", KeyType::kF64, "1", "L2 loss coefficient"},
      {"train.lambda_xent", KeyType::kF64, "0", "cross-entropy coefficient"},
      {"train.learning_rate", KeyType::kF64, "0.001", "Adam learning rate"},
      {"train.grad_clip", KeyType::kF64, "5", "global gradient norm clip"},
      {"train.batch_size", KeyType::kU64, "4", "utterances per step"},
      {"train.max_steps", KeyType::kU64, "2000", "optimizer steps"},
      {"train.checkpoint_interval", KeyType::kU64, "500", "steps between checkpoints"},
      {"train.teacher_forcing", KeyType::kBool, "true", "feed ground-truth frames"},
      {"train.holdout_speaker", KeyType::kString, "", "speaker id to hold out"},
      {"train.holdout_every", KeyType::kU64, "0", "hold out every k-th utterance"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const ConfigKey& k : config_schema()) values_[k.name] = k.default_value;
  }

  static RunConfig from_file(const std::string& path) {
    RunConfig cfg;
    cfg.load_file(path);
    return cfg;
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(strcat_msg("cannot open config file: ", path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(strcat_msg(path, ":", lineno, ": expected key = value"));
      }
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) {
    const ConfigKey* spec = find_key(key);
    if (!spec) throw ConfigError(strcat_msg("unknown configuration key '", key, "'"));
    // Validate by parsing now so errors surface at the set site.
    switch (spec->type) {
      case KeyType::kU64: parse_u64(key, value); break;
      case KeyType::kF64: parse_f64(key, value); break;
      case KeyType::kBool: parse_bool(key, value); break;
      case KeyType::kString: break;
    }
    values_[key] = value;
  }

  std::uint64_t get_u64(const std::string& key) const { return parse_u64(key, raw(key)); }
  double get_f64(const std::string& key) const { return parse_f64(key, raw(key)); }
  bool get_bool(const std::string& key) const { return parse_bool(key, raw(key)); }
  const std::string& get_string(const std::string& key) const { return raw(key); }

  // Canonical digest over sorted key=value lines (map iteration is sorted).
  std::array<std::uint8_t, 32> hash() const {
    Sha256 h;
    for (const auto& [k, v] : values_) {
      h.update(k);
      h.update("=");
      h.update(v);
      h.update("\n");
    }
    return h.finish();
  }

  std::string hash_hex() const { return Sha256::to_hex(hash()); }

  CorpusConfig corpus_config() const {
    CorpusConfig c;
    c.seed = get_u64("seed");
    c.vocab_size = get_u64("corpus.vocab_size");
    c.speakers_low = get_u64("corpus.speakers_low");
    c.speakers_high = get_u64("corpus.speakers_high");
    c.unigrams = get_u64("corpus.unigrams");
    c.bigrams = get_u64("corpus.bigrams");
    c.trigrams = get_u64("corpus.trigrams");
    c.sentences = get_u64("corpus.sentences");
    c.sentence_min = get_u64("corpus.sentence_min");
    c.sentence_max = get_u64("corpus.sentence_max");
    return c;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.use_cnn = get_bool("model.use_cnn");
    m.conv_channels = get_u64("model.conv_channels");
    m.encoder_dim = get_u64("model.encoder_dim");
    m.pyramid_layers = get_u64("model.pyramid_layers");
    m.bidirectional = get_bool("model.bidirectional");
    m.use_attention = get_bool("model.use_attention");
    m.attention_dim = get_u64("model.attention_dim");
    m.decoder_dim = get_u64("model.decoder_dim");
    m.reduction = get_u64("model.reduction");
    m.freq_bins = kFreqBins;
    m.quantize_bins = get_u64("model.quantize_bins");
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lambda_kl = get_f64("train.lambda_kl");
    t.lambda_l2 = get_f64("train.lambda_l2");
    t.lambda_xent = get_f64("train.lambda_xent");
    t.learning_rate = get_f64("train.learning_rate");
    t.grad_clip_norm = get_f64("train.grad_clip");
    t.batch_size = get_u64("train.batch_size");
    t.max_steps = get_u64("train.max_steps");
    t.seed = get_u64("seed");
    t.teacher_forcing = get_bool("train.teacher_forcing");
    t.checkpoint_interval = get_u64("train.checkpoint_interval");
    t.holdout_speaker = get_string("train.holdout_speaker");
    t.holdout_every = get_u64("train.holdout_every");
    return t;
  }

 private:
  std::map<std::string, std::string> values_;

  static const ConfigKey* find_key(const std::string& name) {
    for (const ConfigKey& k : config_schema()) {
      if (name == k.name) return &k;
    }
    return nullptr;
  }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(strcat_msg("unknown configuration key '", key, "'"));
    return it->second;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size()) {
      throw ConfigError(strcat_msg(key, ": expected unsigned integer, got '", v, "'"));
    }
    return x;
  }

  static double parse_f64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size()) {
      throw ConfigError(strcat_msg(key, ": expected number, got '", v, "'"));
    }
    return x;
  }

  static bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(strcat_msg(key, ": expected boolean, got '", v, "'"));
  }
};

}  // namespace spectran

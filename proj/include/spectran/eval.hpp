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
#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "spectran/model.hpp"
#include "spectran/png.hpp"
#include "spectran/train.hpp"

namespace spectran {

// ---- reconstruction error ---------------------------------------------------

// Teacher-forced masked MSE over a split (free-running error is reported
// separately for comparability).
template <typename Scalar>
double reconstruction_error(ParamStore<Scalar>& params, const ModelConfig& cfg,
                            const std::vector<TrainItem<Scalar>>& items,
                            const std::vector<std::size_t>& split,
                            bool teacher_forced = true) {
  if (split.empty()) throw ConfigError("reconstruction_error: empty split");
  return dataset_l2(params, cfg, items, split, teacher_forced);
}

// ---- ablation harness ---------------------------------------------------------

// One named row; each row differs from the base configuration in exactly one
// toggle.  The base keeps every method off: unidirectional encoder, no
// pyramid, no attention (last state as context), no CNN, r = 1, pure L2.
struct AblationSpec {
  std::string name;
  bool pyramid = false;
  bool attention = false;
  bool bidirectional = false;
  bool cnn = false;
  std::size_t reduction = 1;
  bool kl = false;
};

inline std::vector<AblationSpec> table_row_specs() {
  std::vector<AblationSpec> rows;
  rows.push_back({"KL Loss", false, false, false, false, 1, true});
  rows.push_back({"Pyramid", true, false, false, false, 1, false});
  rows.push_back({"Attention", false, true, false, false, 1, false});
  rows.push_back({"Bidirectional", false, false, true, false, 1, false});
  rows.push_back({"CNN", false, false, false, true, 1, false});
  rows.push_back({"DMO-3", false, false, false, false, 3, false});
  return rows;
}

inline void validate_single_toggle(const AblationSpec& s) {
  int changed = 0;
  changed += s.pyramid ? 1 : 0;
  changed += s.attention ? 1 : 0;
  changed += s.bidirectional ? 1 : 0;
  changed += s.cnn ? 1 : 0;
  changed += s.reduction != 1 ? 1 : 0;
  changed += s.kl ? 1 : 0;
  if (changed != 1) {
    throw ConfigError(strcat_msg("ablation row '", s.name, "' must differ from the base",
                                 " in exactly one toggle, found ", changed));
  }
}

struct AblationRowConfig {
  ModelConfig model;
  double lambda_kl = 0, lambda_l2 = 1, lambda_xent = 0;
};

// Materializes a row: start from the all-off base derived from the full
// config, then apply the row's single toggle.
inline AblationRowConfig ablation_row_config(const ModelConfig& full,
                                             const AblationSpec& s) {
  AblationRowConfig row;
  row.model = full;
  row.model.use_cnn = s.cnn;
  row.model.pyramid_layers = s.pyramid ? full.pyramid_layers : 0;
  row.model.bidirectional = s.bidirectional;
  row.model.use_attention = s.attention;
  row.model.reduction = s.reduction;
  row.model.quantize_bins = 0;
  if (s.kl) {
    row.lambda_kl = 1;
    row.lambda_l2 = 0;
  }
  return row;
}

struct AblationRowResult {
  std::string name;
  std::size_t parameters = 0;
  double error = 0;              // teacher-forced masked MSE, training split
  double error_free_running = 0;
  double wall_s_per_epoch = 0;
};

struct EvalReport {
  std::vector<AblationRowResult> rows;
};

inline std::string safe_file_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!out.empty() && out.back() != '_') {
      out.push_back('_');
    }
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// Trains the base row plus each spec row with an identical seed and budget,
// then writes the Method / # Parameters / Error table and one loss-curve CSV
// per row.
template <typename Scalar>
EvalReport run_ablation(std::vector<TrainItem<Scalar>>& items, const ModelConfig& full_cfg,
                        const std::vector<AblationSpec>& specs, const TrainConfig& tcfg,
                        const std::string& out_dir,
                        const std::array<std::uint8_t, 32>& config_hash,
                        std::size_t jobs = 1, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  for (const AblationSpec& s : specs) validate_single_toggle(s);
  fs::create_directories(out_dir);

  struct RowPlan {
    std::string name;
    AblationRowConfig cfg;
  };
  std::vector<RowPlan> plans;
  {
    AblationSpec base_spec;  // everything off
    base_spec.name = "Base Model";
    AblationRowConfig base = ablation_row_config(full_cfg, base_spec);
    plans.push_back({base_spec.name, base});
  }
  for (const AblationSpec& s : specs) plans.push_back({s.name, ablation_row_config(full_cfg, s)});

  EvalReport report;
  report.rows.resize(plans.size());
  DatasetSplit split = split_dataset(items, tcfg);

  auto run_row = [&](std::size_t ri) {
    const RowPlan& plan = plans[ri];
    TrainConfig row_tcfg = tcfg;
    row_tcfg.lambda_kl = plan.cfg.lambda_kl;
    row_tcfg.lambda_l2 = plan.cfg.lambda_l2;
    row_tcfg.lambda_xent = plan.cfg.lambda_xent;
    std::string row_dir = (fs::path(out_dir) / ("row_" + safe_file_name(plan.name))).string();

    auto t0 = std::chrono::steady_clock::now();
    FitResult<Scalar> res =
        fit(items, split, plan.cfg.model, row_tcfg, row_dir, config_hash, false, progress);
    double total_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double steps_per_epoch = static_cast<double>(split.train.size()) /
                             static_cast<double>(row_tcfg.batch_size);

    ParamStore<Scalar> params = init_params<Scalar>(plan.cfg.model, row_tcfg.seed);
    AdamState<Scalar> adam = AdamState<Scalar>::init(params);
    load_checkpoint(res.final_checkpoint, params, &adam, config_hash);

    AblationRowResult& row = report.rows[ri];
    row.name = plan.name;
    row.parameters = count_params(plan.cfg.model).total;
    row.error = reconstruction_error(params, plan.cfg.model, items, split.train, true);
    row.error_free_running =
        reconstruction_error(params, plan.cfg.model, items, split.train, false);
    row.wall_s_per_epoch = tcfg.max_steps > 0
                               ? total_s * steps_per_epoch / static_cast<double>(tcfg.max_steps)
                               : 0.0;

    // Figure-style per-step loss curve for this row.
    std::vector<MetricsRow> rows_csv =
        read_metrics_csv((fs::path(row_dir) / "metrics.csv").string());
    std::ofstream curve((fs::path(out_dir) / ("curve_" + safe_file_name(plan.name) + ".csv")));
    curve << "step,l2,kl,xent,mixed\n";
    for (const auto& r : rows_csv) {
      curve << r.step << ',' << r.l2 << ',' << r.kl << ',' << r.xent << ',' << r.mixed
            << "\n";
    }
  };

  if (jobs <= 1) {
    for (std::size_t ri = 0; ri < plans.size(); ++ri) run_row(ri);
  } else {
    std::vector<std::thread> workers;
    std::size_t n_threads = std::min(jobs, plans.size());
    std::size_t chunk = (plans.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      std::size_t lo = t * chunk, hi = std::min(plans.size(), lo + chunk);
      if (lo < hi) {
        workers.emplace_back([&, lo, hi]() {
          for (std::size_t ri = lo; ri < hi; ++ri) run_row(ri);
        });
      }
    }
    for (auto& w : workers) w.join();
  }

  std::ofstream table((fs::path(out_dir) / "ablation.csv"));
  table << "Method,# Parameters,Error\n";
  for (const auto& row : report.rows) {
    char err[32];
    std::snprintf(err, sizeof(err), "%.6e", row.error);
    table << row.name << ',' << row.parameters << ',' << err << "\n";
  }
  std::ofstream details((fs::path(out_dir) / "ablation_details.csv"));
  details << "Method,# Parameters,Error,Error (free running),Wall s/epoch\n";
  for (const auto& row : report.rows) {
    details << row.name << ',' << row.parameters << ',' << row.error << ','
            << row.error_free_running << ',' << row.wall_s_per_epoch << "\n";
  }
  return report;
}

// ---- encoder embedding purity ----------------------------------------------------

struct EmbeddingEntry {
  std::string utterance_id;
  std::string word_id;
  std::string speaker_id;
  std::vector<double> dims;
};

struct PurityResult {
  double purity = 0;
  std::size_t used = 0;
  std::vector<std::string> excluded_words;
  std::vector<EmbeddingEntry> embeddings;
};

// Mean final-layer encoder state of one utterance.
template <typename Scalar>
std::vector<double> encoder_embedding(ParamStore<Scalar>& params, const ModelConfig& cfg,
                                      const Tensor<Scalar>& source) {
  Tape<Scalar> tape;
  tape.set_grad_enabled(false);
  BoundParams<Scalar> bound(tape, params);
  std::size_t conv_valid = 0;
  auto feats = conv_frontend(tape, bound, cfg, source, source.shape[0], &conv_valid);
  EncoderOutput<Scalar> enc = pblstm_encode(tape, bound, cfg, feats, conv_valid);
  const Tensor<Scalar>& H = tape.val(enc.states);
  std::vector<double> mean(H.shape[1], 0.0);
  for (std::size_t t = 0; t < enc.valid; ++t) {
    for (std::size_t k = 0; k < H.shape[1]; ++k) mean[k] += static_cast<double>(H.at(t, k));
  }
  for (double& v : mean) v /= static_cast<double>(enc.valid);
  return mean;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

// Leave-one-out 1-nearest-neighbor word classification accuracy under cosine
// distance.  Words with a single instance are excluded (reported back).
inline double loo_purity(const std::vector<EmbeddingEntry>& entries) {
  double correct = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    double best = HUGE_VAL;
    std::size_t best_j = i;
    for (std::size_t j = 0; j < entries.size(); ++j) {
      if (j == i) continue;
      double d = cosine_distance(entries[i].dims, entries[j].dims);
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    if (entries[best_j].word_id == entries[i].word_id) correct += 1;
  }
  return entries.empty() ? 0.0 : correct / static_cast<double>(entries.size());
}

// Embeds every single-word utterance in the list and scores word purity.
template <typename Scalar>
PurityResult embedding_purity(ParamStore<Scalar>& params, const ModelConfig& cfg,
                              const std::vector<TrainItem<Scalar>>& items,
                              const std::vector<std::size_t>& split) {
  std::map<std::string, std::size_t> word_counts;
  for (std::size_t idx : split) {
    if (items[idx].record.source_words.size() == 1) {
      ++word_counts[items[idx].record.source_words[0]];
    }
  }
  PurityResult res;
  std::size_t words_kept = 0;
  for (const auto& [word, count] : word_counts) {
    if (count < 2) {
      res.excluded_words.push_back(word);
    } else {
      ++words_kept;
    }
  }
  if (words_kept < 2) {
    throw ConfigError("embedding_purity: need at least two words with two instances each");
  }
  for (std::size_t idx : split) {
    const TrainItem<Scalar>& item = items[idx];
    if (item.record.source_words.size() != 1) continue;
    if (word_counts[item.record.source_words[0]] < 2) continue;
    EmbeddingEntry e;
    e.utterance_id = item.record.id;
    e.word_id = item.record.source_words[0];
    e.speaker_id = item.record.speaker_id;
    e.dims = encoder_embedding(params, cfg, item.source);
    res.embeddings.push_back(std::move(e));
  }
  res.used = res.embeddings.size();
  res.purity = loo_purity(res.embeddings);
  return res;
}

inline void write_embeddings_csv(const std::string& path,
                                 const std::vector<EmbeddingEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw DataError(strcat_msg("cannot open for writing: ", path));
  f << "utterance_id,word_id,speaker_id";
  if (!entries.empty()) {
    for (std::size_t k = 0; k < entries[0].dims.size(); ++k) f << ",dim" << k;
  }
  f << "\n";
  for (const auto& e : entries) {
    f << e.utterance_id << ',' << e.word_id << ',' << e.speaker_id;
    for (double v : e.dims) f << ',' << v;
    f << "\n";
  }
}

// Chance-level control: LOO 1-NN purity of i.i.d. random embeddings with the
// same class structure, Monte Carlo over `trials` draws.
struct RandomPurityStats {
  double mean = 0;
  double stddev = 0;
};

inline RandomPurityStats random_embedding_purity(std::size_t vocab, std::size_t instances,
                                                 std::size_t dims, std::size_t trials,
                                                 std::uint64_t seed) {
  RandomPurityStats stats;
  std::vector<double> purities(trials);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, "random-purity", trial));
    std::vector<EmbeddingEntry> entries;
    for (std::size_t w = 0; w < vocab; ++w) {
      for (std::size_t i = 0; i < instances; ++i) {
        EmbeddingEntry e;
        e.word_id = word_name(w);
        e.dims.resize(dims);
        for (double& v : e.dims) v = rng.uniform(-1.0, 1.0);
        entries.push_back(std::move(e));
      }
    }
    purities[trial] = loo_purity(entries);
  }
  for (double p : purities) stats.mean += p;
  stats.mean /= static_cast<double>(trials);
  double var = 0;
  for (double p : purities) var += (p - stats.mean) * (p - stats.mean);
  stats.stddev = std::sqrt(var / static_cast<double>(trials));
  return stats;
}

// ---- unseen-speaker evaluation -----------------------------------------------------

struct UnseenSpeakerResult {
  double train_mse = 0;
  double held_out_mse = 0;
  double ratio = 0;
};

// Compares teacher-forced reconstruction error on training-speaker utterances
// against the held-out speaker, and exports input/predicted/ground-truth
// spectrogram triptychs for the held-out utterances.
template <typename Scalar>
UnseenSpeakerResult unseen_speaker_eval(ParamStore<Scalar>& params, const ModelConfig& cfg,
                                        const std::vector<TrainItem<Scalar>>& items,
                                        const DatasetSplit& split,
                                        const std::string& held_out_speaker,
                                        const std::string& png_dir = "",
                                        bool enforce_protocol = true) {
  if (split.held_out.empty()) {
    throw ConfigError("unseen_speaker_eval: empty held-out set");
  }
  if (enforce_protocol) {
    for (std::size_t idx : split.train) {
      if (items[idx].record.speaker_id == held_out_speaker) {
        throw ConfigError(strcat_msg("unseen_speaker_eval: protocol violation: speaker ",
                                     held_out_speaker, " appears in the training split (",
                                     items[idx].record.id, ")"));
      }
    }
  }
  UnseenSpeakerResult res;
  res.train_mse = dataset_l2(params, cfg, items, split.train);
  res.held_out_mse = dataset_l2(params, cfg, items, split.held_out);
  res.ratio = res.train_mse > 0 ? res.held_out_mse / res.train_mse : HUGE_VAL;

  if (!png_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(png_dir);
    for (std::size_t idx : split.held_out) {
      const TrainItem<Scalar>& item = items[idx];
      Tape<Scalar> tape;
      tape.set_grad_enabled(false);
      BoundParams<Scalar> bound(tape, params);
      ForwardResult<Scalar> fwd =
          forward(tape, bound, cfg, item.source, item.source.shape[0],
                  DecodeMode::kFreeRunning, item.target.shape[0]);
      auto to_double = [](const Tensor<Scalar>& t) { return t.template cast<double>(); };
      write_spectrogram_png((fs::path(png_dir) / (item.record.id + "_input.png")).string(),
                            to_double(item.source));
      write_spectrogram_png((fs::path(png_dir) / (item.record.id + "_pred.png")).string(),
                            to_double(fwd.prediction));
      write_spectrogram_png((fs::path(png_dir) / (item.record.id + "_truth.png")).string(),
                            to_double(item.target));
    }
  }
  return res;
}

}  // namespace spectran

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

// Command-line front end: corpus generation, training, translation,
// evaluation, the ablation harness, and the gradient-check gate.
//
// Exit codes: 0 success, 2 configuration error, 3 data/format error,
// 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spectran/config.hpp"
#include "spectran/corpus.hpp"
#include "spectran/eval.hpp"
#include "spectran/gradcheck_suite.hpp"
#include "spectran/model.hpp"
#include "spectran/png.hpp"
#include "spectran/train.hpp"
#include "spectran/wav.hpp"

namespace fs = std::filesystem;
using namespace spectran;

namespace {

using RealT = float;  // 32-bit training mode; gradcheck runs in 64-bit

struct SharedFlags {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";
  std::size_t jobs = 1;
  bool force = false;
  bool deterministic = true;
  std::vector<std::string> overrides;
};

void add_shared(CLI::App* cmd, SharedFlags& fl) {
  cmd->add_option("--config", fl.config_path, "configuration file (key = value lines)");
  cmd->add_option("--seed", fl.seed, "master seed (overrides the config key)")
      ->each([&fl](const std::string&) { fl.seed_set = true; });
  cmd->add_option("--out", fl.out_dir, "output directory")->capture_default_str();
  cmd->add_option("--jobs", fl.jobs,
                  "worker threads for corpus rendering and ablation rows")
      ->capture_default_str();
  cmd->add_flag("--force", fl.force, "allow writing into a non-empty output directory");
  cmd->add_flag("--deterministic,!--no-deterministic", fl.deterministic,
                "bit-reproducible mode: keeps the optimizer loop single-threaded")
      ->capture_default_str();
  cmd->add_option("--set", fl.overrides, "override a config key, KEY=VALUE (repeatable)");
}

RunConfig build_config(const SharedFlags& fl) {
  RunConfig cfg;
  if (!fl.config_path.empty()) cfg.load_file(fl.config_path);
  for (const std::string& kv : fl.overrides) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(strcat_msg("--set expects KEY=VALUE, got '", kv, "'"));
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (fl.seed_set) cfg.set("seed", std::to_string(fl.seed));
  return cfg;
}

void require_writable_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ConfigError(strcat_msg("output directory ", dir,
                                 " is not empty; pass --force to write anyway"));
  }
  fs::create_directories(dir);
}

int cmd_gen_corpus(const SharedFlags& fl) {
  RunConfig cfg = build_config(fl);
  require_writable_dir(fl.out_dir, fl.force);
  CorpusConfig ccfg = cfg.corpus_config();
  CorpusManifest manifest = generate_corpus(ccfg, cfg.hash_hex(), fl.out_dir, fl.jobs);

  std::map<std::string, std::size_t> per_tier, per_speaker;
  for (const auto& r : manifest.records) {
    per_tier[r.id.substr(0, 3)]++;
    per_speaker[r.speaker_id]++;
  }
  std::printf("corpus: %zu utterances, %zu words x %zu languages, %zu speakers\n",
              manifest.records.size(), manifest.vocab.size(), manifest.languages.size(),
              manifest.speakers.size());
  for (const auto& [tier, n] : per_tier) std::printf("  tier %s: %zu\n", tier.c_str(), n);
  for (const auto& [spk, n] : per_speaker)
    std::printf("  speaker %s: %zu\n", spk.c_str(), n);
  std::printf("manifest: %s\n", (fs::path(fl.out_dir) / "manifest.tsv").string().c_str());
  return 0;
}

int cmd_train(const SharedFlags& fl, const std::string& manifest_path, bool resume,
              std::int64_t max_steps_override) {
  RunConfig cfg = build_config(fl);
  if (max_steps_override >= 0) {
    cfg.set("train.max_steps", std::to_string(max_steps_override));
  }
  if (manifest_path.empty()) throw ConfigError("train: --manifest is required");
  if (!fs::exists(manifest_path)) {
    throw DataError(strcat_msg("manifest not found: ", manifest_path));
  }
  fs::create_directories(fl.out_dir);
  CorpusManifest manifest = read_manifest(manifest_path);
  ModelConfig mcfg = cfg.model_config();
  TrainConfig tcfg = cfg.train_config();
  std::vector<TrainItem<RealT>> items =
      load_dataset<RealT>(manifest_path, manifest, mcfg.quantize_bins);
  DatasetSplit split = split_dataset(items, tcfg);
  FitResult<RealT> res =
      fit(items, split, mcfg, tcfg, fl.out_dir, cfg.hash(), resume, &std::cout);
  std::printf("trained %llu steps; final train l2 %.6e\n",
              static_cast<unsigned long long>(res.steps_run), res.final_train_l2);
  std::printf("checkpoint: %s\n", res.final_checkpoint.c_str());
  return 0;
}

int cmd_translate(const SharedFlags& fl, const std::string& ckpt_path,
                  const std::string& in_wav, const std::string& out_wav,
                  std::size_t gl_iters, bool emit_spectrograms, bool ignore_hash) {
  RunConfig cfg = build_config(fl);
  ModelConfig mcfg = cfg.model_config();
  ParamStore<RealT> params = init_params<RealT>(mcfg, cfg.get_u64("seed"));
  load_checkpoint(ckpt_path, params, static_cast<AdamState<RealT>*>(nullptr), cfg.hash(),
                  ignore_hash);

  Waveform in = read_wav(in_wav);
  Spectrogram spec = to_spectrogram(in);
  Tensor<RealT> source = spec.frames.cast<RealT>();

  Tape<RealT> tape;
  tape.set_grad_enabled(false);
  BoundParams<RealT> bound(tape, params);
  std::size_t budget = free_running_budget(source.shape[0]);
  ForwardResult<RealT> fwd = forward(tape, bound, mcfg, source, source.shape[0],
                                     DecodeMode::kFreeRunning, budget);
  Tensor<RealT> trimmed = trim_trailing_silence(fwd.prediction);

  Spectrogram pred;
  pred.frames = trimmed.cast<double>();
  GriffinLimResult gl = griffin_lim(pred, gl_iters);
  if (!out_wav.empty()) {
    fs::path out_path(out_wav);
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    write_wav(out_wav, gl.wave);
  }
  if (emit_spectrograms) {
    fs::path base = out_wav.empty() ? fs::path(fl.out_dir) / "translate" : fs::path(out_wav);
    write_spectrogram_png(base.string() + ".input.png", spec.frames);
    write_spectrogram_png(base.string() + ".output.png", pred.frames);
  }
  std::printf("translated %zu -> %zu frames (budget %zu), GL convergence %.4e\n",
              source.shape[0], trimmed.shape[0], budget,
              gl.convergence.empty() ? 0.0 : gl.convergence.back());
  return 0;
}

int cmd_eval(const SharedFlags& fl, const std::string& ckpt_path,
             const std::string& manifest_path, const std::string& split_spec,
             bool ignore_hash) {
  RunConfig cfg = build_config(fl);
  if (manifest_path.empty()) throw ConfigError("eval: --manifest is required");
  CorpusManifest manifest = read_manifest(manifest_path);
  ModelConfig mcfg = cfg.model_config();
  TrainConfig tcfg = cfg.train_config();
  ParamStore<RealT> params = init_params<RealT>(mcfg, tcfg.seed);
  load_checkpoint(ckpt_path, params, static_cast<AdamState<RealT>*>(nullptr), cfg.hash(),
                  ignore_hash);
  std::vector<TrainItem<RealT>> items =
      load_dataset<RealT>(manifest_path, manifest, mcfg.quantize_bins);
  DatasetSplit split = split_dataset(items, tcfg);

  std::vector<std::size_t> chosen;
  if (split_spec == "train") {
    chosen = split.train;
  } else if (split_spec == "holdout") {
    chosen = split.held_out;
  } else if (split_spec == "all") {
    for (std::size_t i = 0; i < items.size(); ++i) chosen.push_back(i);
  } else if (split_spec.rfind("speaker:", 0) == 0) {
    std::string spk = split_spec.substr(8);
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].record.speaker_id == spk) chosen.push_back(i);
    }
  } else {
    throw ConfigError(strcat_msg("eval: unknown split '", split_spec,
                                 "' (use train|holdout|all|speaker:<id>)"));
  }
  double mse_tf = reconstruction_error(params, mcfg, items, chosen, true);
  double mse_fr = reconstruction_error(params, mcfg, items, chosen, false);
  fs::create_directories(fl.out_dir);
  std::ofstream report((fs::path(fl.out_dir) / "eval.csv"));
  report << "split,utterances,mse_teacher_forced,mse_free_running\n";
  report << split_spec << ',' << chosen.size() << ',' << mse_tf << ',' << mse_fr << "\n";
  std::printf("split %s: %zu utterances, teacher-forced mse %.6e, free-running mse %.6e\n",
              split_spec.c_str(), chosen.size(), mse_tf, mse_fr);
  return 0;
}

int cmd_ablate(const SharedFlags& fl, const std::string& manifest_path) {
  RunConfig cfg = build_config(fl);
  if (manifest_path.empty()) throw ConfigError("ablate: --manifest is required");
  require_writable_dir(fl.out_dir, fl.force);
  CorpusManifest manifest = read_manifest(manifest_path);
  ModelConfig mcfg = cfg.model_config();
  TrainConfig tcfg = cfg.train_config();
  std::vector<TrainItem<RealT>> items =
      load_dataset<RealT>(manifest_path, manifest, /*quantize_bins=*/0);
  EvalReport report = run_ablation(items, mcfg, table_row_specs(), tcfg, fl.out_dir,
                                   cfg.hash(), fl.jobs,
                                   fl.jobs > 1 ? nullptr : &std::cout);
  std::printf("%-14s %14s %12s\n", "Method", "# Parameters", "Error");
  for (const auto& row : report.rows) {
    std::printf("%-14s %14zu %12.4e\n", row.name.c_str(), row.parameters, row.error);
  }
  std::printf("report: %s\n", (fs::path(fl.out_dir) / "ablation.csv").string().c_str());
  return 0;
}

int cmd_gradcheck(std::size_t seeds, double eps, double tol, bool self_test_fault) {
  GradSuiteOptions opt;
  opt.seeds = seeds;
  opt.eps = eps;
  opt.tolerance = tol;
  opt.inject_fault = self_test_fault;
  std::vector<GradCheckReport> reports = run_gradcheck_suite(opt);
  bool all_passed = true;
  std::printf("%-18s %-12s %s\n", "op", "max_rel_err", "status");
  for (const auto& r : reports) {
    std::printf("%-18s %-12.3e %s\n", r.op_name.c_str(), r.max_rel_error,
                r.passed ? "passed" : "FAILED");
    all_passed = all_passed && r.passed;
  }
  if (!all_passed) {
    for (const auto& r : reports) {
      if (!r.passed) std::fprintf(stderr, "gradient check failed: %s\n", r.op_name.c_str());
    }
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectran: desk-scale spectrogram-to-spectrogram translation"};
  app.require_subcommand(1);

  SharedFlags fl_gen, fl_train, fl_translate, fl_eval, fl_ablate;

  auto* gen = app.add_subcommand("gen-corpus", "synthesize a parallel word corpus");
  add_shared(gen, fl_gen);

  auto* train = app.add_subcommand("train", "train a model on a corpus manifest");
  add_shared(train, fl_train);
  std::string train_manifest;
  bool train_resume = false;
  std::int64_t train_max_steps = -1;
  train->add_option("--manifest", train_manifest, "corpus manifest path")->required();
  train->add_flag("--resume", train_resume, "continue from the latest checkpoint in --out");
  train->add_option("--max-steps", train_max_steps,
                    "override train.max_steps from the config");

  auto* translate = app.add_subcommand("translate", "translate one WAV file");
  SharedFlags& fl_tr = fl_translate;
  add_shared(translate, fl_tr);
  std::string tr_ckpt, tr_in, tr_out;
  std::size_t tr_gl_iters = 60;
  bool tr_png = false, tr_ignore_hash = false;
  translate->add_option("--checkpoint", tr_ckpt, "model checkpoint")->required();
  translate->add_option("--in", tr_in, "input WAV (PCM16 mono 16 kHz)")->required();
  translate->add_option("--out-wav", tr_out, "output WAV path")->required();
  translate->add_option("--gl-iters", tr_gl_iters, "Griffin-Lim iterations")
      ->capture_default_str();
  translate->add_flag("--emit-spectrograms", tr_png,
                      "also write input/output spectrogram PNGs");
  translate->add_flag("--ignore-config-hash", tr_ignore_hash,
                      "load a checkpoint whose config hash differs");

  auto* eval = app.add_subcommand("eval", "reconstruction error over a split");
  add_shared(eval, fl_eval);
  std::string ev_ckpt, ev_manifest, ev_split = "train";
  bool ev_ignore_hash = false;
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", ev_manifest, "corpus manifest path")->required();
  eval->add_option("--split", ev_split, "train|holdout|all|speaker:<id>")
      ->capture_default_str();
  eval->add_flag("--ignore-config-hash", ev_ignore_hash,
                 "load a checkpoint whose config hash differs");

  auto* ablate = app.add_subcommand("ablate", "train the component-ablation table");
  add_shared(ablate, fl_ablate);
  std::string ab_manifest;
  ablate->add_option("--manifest", ab_manifest, "corpus manifest path")->required();

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every operation");
  std::size_t gc_seeds = 5;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  bool gc_fault = false;
  gradcheck->add_option("--seeds", gc_seeds, "seeds per operation")->capture_default_str();
  gradcheck->add_option("--eps", gc_eps, "central-difference step")->capture_default_str();
  gradcheck->add_option("--tol", gc_tol, "max relative error accepted")
      ->capture_default_str();
  gradcheck->add_flag("--self-test-fault", gc_fault,
                      "inject a known-bad gradient row; the run must then fail");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_corpus(fl_gen);
    if (train->parsed()) {
      return cmd_train(fl_train, train_manifest, train_resume, train_max_steps);
    }
    if (translate->parsed()) {
      return cmd_translate(fl_tr, tr_ckpt, tr_in, tr_out, tr_gl_iters, tr_png,
                           tr_ignore_hash);
    }
    if (eval->parsed()) {
      return cmd_eval(fl_eval, ev_ckpt, ev_manifest, ev_split, ev_ignore_hash);
    }
    if (ablate->parsed()) return cmd_ablate(fl_ablate, ab_manifest);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds, gc_eps, gc_tol, gc_fault);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

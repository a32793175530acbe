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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "spectran/error.hpp"
#include "spectran/rng.hpp"
#include "spectran/tape.hpp"
#include "spectran/tensor.hpp"

namespace spectran {

// Sequence-to-sequence spectrogram translator: a strided convolutional
// front-end shortens the input, a pyramidal bidirectional LSTM encodes it,
// and an attention decoder emits `reduction` spectrogram frames per step.

constexpr std::size_t kConvKernel = 7;
constexpr std::size_t kConvStride = 2;
constexpr std::size_t kConvPad = 3;

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

struct ModelConfig {
  bool use_cnn = true;
  std::size_t conv_channels = 8;  // per conv block, 7x7 kernels, stride (2,2)
  std::size_t encoder_dim = 64;
  std::size_t pyramid_layers = 2;  // halving layers above the first BLSTM
  bool bidirectional = true;
  bool use_attention = true;  // off: last encoder state as a fixed context
  std::size_t attention_dim = 64;
  std::size_t decoder_dim = 64;
  std::size_t reduction = 2;  // spectrogram frames emitted per decoder step
  std::size_t freq_bins = 513;
  std::size_t quantize_bins = 0;  // 0 disables the classification head

  void validate() const {
    if (reduction < 1) throw ConfigError("model: reduction factor must be >= 1");
    if (encoder_dim < 1 || decoder_dim < 1 || attention_dim < 1 || freq_bins < 1) {
      throw ConfigError("model: all layer sizes must be >= 1");
    }
    if (use_cnn && conv_channels < 1) throw ConfigError("model: conv_channels must be >= 1");
    if (quantize_bins == 1) throw ConfigError("model: quantize_bins must be 0 or >= 2");
  }

  // Both the conv stack and the no-CNN strided subsampling shorten time by 4.
  static std::size_t conv_time_len(std::size_t T) {
    return ceil_div(ceil_div(T, 2), 2);
  }

  std::size_t conv_freq_len() const { return ceil_div(ceil_div(freq_bins, 2), 2); }

  std::size_t encoder_time_len(std::size_t T) const {
    std::size_t L = conv_time_len(T);
    for (std::size_t j = 0; j < pyramid_layers; ++j) L = ceil_div(L, 2);
    return L;
  }

  std::size_t feature_dim() const {
    return use_cnn ? conv_channels * conv_freq_len() : freq_bins;
  }

  std::size_t encoder_out_dim() const {
    return bidirectional ? 2 * encoder_dim : encoder_dim;
  }

  std::size_t decoder_steps(std::size_t target_len) const {
    return ceil_div(target_len, reduction);
  }

  std::size_t decoder_input_dim() const {
    return reduction * freq_bins + encoder_out_dim();
  }
};

// ---- parameter store -------------------------------------------------------------

template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
  };

  Entry& add(const std::string& name, Tensor<Scalar> value) {
    if (index_.count(name)) throw ConfigError(strcat_msg("duplicate parameter ", name));
    value.requires_grad = true;
    Entry e;
    e.name = name;
    e.grad.shape = value.shape;
    e.grad.data.assign(value.numel(), Scalar(0));
    e.value = std::move(value);
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError(strcat_msg("unknown parameter ", name));
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError(strcat_msg("unknown parameter ", name));
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.zero();
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

enum class ParamInit { kXavier, kZeros, kLstmBias };

// Canonical enumeration of every learnable tensor; parameter creation and
// parameter counting both walk this list so they cannot drift apart.
template <typename Fn>
void for_each_model_param(const ModelConfig& cfg, Fn&& fn) {
  std::size_t d = cfg.encoder_dim;
  if (cfg.use_cnn) {
    std::size_t C = cfg.conv_channels;
    fn("conv1.kernel", std::vector<std::size_t>{C, 1, kConvKernel, kConvKernel},
       ParamInit::kXavier);
    fn("conv1.bias", std::vector<std::size_t>{C}, ParamInit::kZeros);
    fn("conv2.kernel", std::vector<std::size_t>{C, C, kConvKernel, kConvKernel},
       ParamInit::kXavier);
    fn("conv2.bias", std::vector<std::size_t>{C}, ParamInit::kZeros);
  }
  auto lstm = [&](const std::string& prefix, std::size_t input_dim, std::size_t width) {
    fn(prefix + ".wx", std::vector<std::size_t>{4 * width, input_dim}, ParamInit::kXavier);
    fn(prefix + ".wh", std::vector<std::size_t>{4 * width, width}, ParamInit::kXavier);
    fn(prefix + ".b", std::vector<std::size_t>{4 * width}, ParamInit::kLstmBias);
  };
  std::size_t in_dim = cfg.feature_dim();
  lstm("enc.layer0.fwd", in_dim, d);
  if (cfg.bidirectional) lstm("enc.layer0.bwd", in_dim, d);
  std::size_t layer_out = cfg.encoder_out_dim();
  for (std::size_t j = 1; j <= cfg.pyramid_layers; ++j) {
    std::string prefix = "enc.pyr" + std::to_string(j);
    lstm(prefix + ".fwd", 2 * layer_out, d);
    if (cfg.bidirectional) lstm(prefix + ".bwd", 2 * layer_out, d);
  }
  if (cfg.use_attention) {
    fn("att.W", std::vector<std::size_t>{cfg.attention_dim, cfg.decoder_dim},
       ParamInit::kXavier);
    fn("att.V", std::vector<std::size_t>{cfg.attention_dim, cfg.encoder_out_dim()},
       ParamInit::kXavier);
    fn("att.b", std::vector<std::size_t>{cfg.attention_dim}, ParamInit::kZeros);
    fn("att.w", std::vector<std::size_t>{cfg.attention_dim}, ParamInit::kXavier);
  }
  lstm("dec.lstm", cfg.decoder_input_dim(), cfg.decoder_dim);
  std::size_t head_in = cfg.decoder_dim + cfg.encoder_out_dim();
  std::size_t rF = cfg.reduction * cfg.freq_bins;
  fn("dec.out.weight", std::vector<std::size_t>{rF, head_in}, ParamInit::kXavier);
  fn("dec.out.bias", std::vector<std::size_t>{rF}, ParamInit::kZeros);
  if (cfg.quantize_bins > 0) {
    fn("dec.cls.weight", std::vector<std::size_t>{rF * cfg.quantize_bins, head_in},
       ParamInit::kXavier);
    fn("dec.cls.bias", std::vector<std::size_t>{rF * cfg.quantize_bins}, ParamInit::kZeros);
  }
}

template <typename Scalar>
ParamStore<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<Scalar> store;
  for_each_model_param(cfg, [&](const std::string& name,
                                const std::vector<std::size_t>& shape, ParamInit kind) {
    Tensor<Scalar> t{std::vector<std::size_t>(shape)};
    if (kind == ParamInit::kXavier) {
      std::size_t fan_in, fan_out;
      if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];
        fan_out = shape[0] * shape[2] * shape[3];
      } else if (shape.size() == 2) {
        fan_in = shape[1];
        fan_out = shape[0];
      } else {
        fan_in = t.numel();
        fan_out = 1;
      }
      Rng rng(derive_seed(seed, "init", detail::fnv1a64(name)));
      double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (auto& v : t.data) v = static_cast<Scalar>(rng.uniform(-limit, limit));
    } else if (kind == ParamInit::kLstmBias) {
      std::size_t width = t.numel() / 4;
      for (std::size_t i = width; i < 2 * width; ++i) t.data[i] = Scalar(1);  // forget gate
    }
    store.add(name, std::move(t));
  });
  return store;
}

struct ParamCountItem {
  std::string name;
  std::size_t count;
};

struct ParamCountReport {
  std::vector<ParamCountItem> items;
  std::size_t total = 0;
};

inline ParamCountReport count_params(const ModelConfig& cfg) {
  cfg.validate();
  ParamCountReport report;
  for_each_model_param(cfg, [&](const std::string& name,
                                const std::vector<std::size_t>& shape, ParamInit) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    report.items.push_back({name, n});
    report.total += n;
  });
  return report;
}

// ---- forward graph pieces -----------------------------------------------------

// Per-tape binding of every parameter (leaf nodes with gradient sinks).
template <typename Scalar>
struct BoundParams {
  std::map<std::string, typename Tape<Scalar>::Var> vars;

  BoundParams() = default;
  BoundParams(Tape<Scalar>& tape, ParamStore<Scalar>& store) {
    for (auto& e : store.entries()) vars[e.name] = tape.leaf(&e.value, &e.grad);
  }
  typename Tape<Scalar>::Var operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError(strcat_msg("parameter not bound: ", name));
    return it->second;
  }
  bool contains(const std::string& name) const { return vars.count(name) != 0; }
};

template <typename Scalar>
struct EncoderOutput {
  typename Tape<Scalar>::Var states = 0;  // T_enc x enc_out_dim, zero beyond valid
  std::size_t valid = 0;
};

namespace detail {

// Cached activations of one LSTM direction over a sequence.
template <typename Scalar>
struct SeqDirCache {
  std::vector<Scalar> gates;  // valid x 4d
  std::vector<Scalar> cells;  // valid x d
};

template <typename Scalar>
void lstm_seq_forward(const Tensor<Scalar>& x, std::size_t valid, bool backwards,
                      const Tensor<Scalar>& wx, const Tensor<Scalar>& wh,
                      const Tensor<Scalar>& b, std::size_t d, Tensor<Scalar>& out,
                      std::size_t out_col, SeqDirCache<Scalar>* cache) {
  std::size_t din = x.shape[1];
  if (cache) {
    cache->gates.assign(valid * 4 * d, Scalar(0));
    cache->cells.assign(valid * d, Scalar(0));
  }
  std::vector<Scalar> h(d, Scalar(0)), c(d, Scalar(0)), gates(4 * d);
  for (std::size_t step = 0; step < valid; ++step) {
    std::size_t t = backwards ? valid - 1 - step : step;
    Tape<Scalar>::lstm_gates(gates.data(), x.row_ptr(t), h.data(), wx.data.data(),
                             wh.data.data(), b.data.data(), din, d);
    for (std::size_t j = 0; j < d; ++j) {
      double c_new = static_cast<double>(gates[d + j]) * c[j] +
                     static_cast<double>(gates[j]) * gates[2 * d + j];
      c[j] = static_cast<Scalar>(c_new);
      h[j] = static_cast<Scalar>(static_cast<double>(gates[3 * d + j]) * std::tanh(c_new));
      out.at(t, out_col + j) = h[j];
    }
    if (cache) {
      std::copy(gates.begin(), gates.end(), cache->gates.begin() + step * 4 * d);
      std::copy(c.begin(), c.end(), cache->cells.begin() + step * d);
    }
  }
}

}  // namespace detail

// Fused bidirectional LSTM over a (T x din) sequence node.  Rows at and past
// `valid` stay zero; the backward direction starts at the last valid frame.
template <typename Scalar>
typename Tape<Scalar>::Var blstm_seq(Tape<Scalar>& tape, typename Tape<Scalar>::Var x,
                                     std::size_t valid,
                                     typename Tape<Scalar>::Var wx_f,
                                     typename Tape<Scalar>::Var wh_f,
                                     typename Tape<Scalar>::Var b_f,
                                     bool bidirectional,
                                     typename Tape<Scalar>::Var wx_b = 0,
                                     typename Tape<Scalar>::Var wh_b = 0,
                                     typename Tape<Scalar>::Var b_b = 0) {
  using Var = typename Tape<Scalar>::Var;
  const Tensor<Scalar>& tx = tape.val(x);
  if (tx.rank() != 2) throw DimensionError("blstm_seq: T x din input expected");
  std::size_t T = tx.shape[0];
  if (valid > T) throw DimensionError("blstm_seq: valid exceeds sequence length");
  const Tensor<Scalar>& twx = tape.val(wx_f);
  std::size_t d = twx.shape[0] / 4;
  std::size_t dirs = bidirectional ? 2 : 1;

  Tensor<Scalar> out(std::vector<std::size_t>{T, dirs * d});
  auto cache_f = std::make_shared<detail::SeqDirCache<Scalar>>();
  auto cache_b = std::make_shared<detail::SeqDirCache<Scalar>>();
  bool want_cache = tape.grad_enabled();
  detail::lstm_seq_forward(tx, valid, false, tape.val(wx_f), tape.val(wh_f),
                           tape.val(b_f), d, out, 0, want_cache ? cache_f.get() : nullptr);
  if (bidirectional) {
    detail::lstm_seq_forward(tx, valid, true, tape.val(wx_b), tape.val(wh_b),
                             tape.val(b_b), d, out, d,
                             want_cache ? cache_b.get() : nullptr);
  }

  Var v;
  if (bidirectional) {
    v = tape.make_node(std::move(out), {x, wx_f, wh_f, b_f, wx_b, wh_b, b_b});
  } else {
    v = tape.make_node(std::move(out), {x, wx_f, wh_f, b_f});
  }
  tape.set_backward(v, [v, x, wx_f, wh_f, b_f, wx_b, wh_b, b_b, valid, d, dirs,
                        bidirectional, cache_f, cache_b](Tape<Scalar>& t) {
    const Tensor<Scalar>& g = t.grad(v);
    const Tensor<Scalar>& outv = t.val(v);
    const Tensor<Scalar>& tx2 = t.val(x);
    std::size_t din = tx2.shape[1];

    // One direction of truncated-free BPTT.
    auto run_dir = [&](bool backwards, std::size_t col,
                       const detail::SeqDirCache<Scalar>& cache, Var wx, Var wh, Var b) {
      const Tensor<Scalar>& twx = t.val(wx);
      const Tensor<Scalar>& twh = t.val(wh);
      bool gx = t.needs_grad(x), gwx = t.needs_grad(wx), gwh = t.needs_grad(wh),
           gb = t.needs_grad(b);
      std::vector<double> carry_dh(d, 0.0), carry_dc(d, 0.0);
      std::vector<Scalar> dpre(4 * d);
      for (std::size_t step = valid; step-- > 0;) {
        // step indexes the direction's own processing order
        std::size_t tpos = backwards ? valid - 1 - step : step;
        const Scalar* gates = cache.gates.data() + step * 4 * d;
        const Scalar* cells = cache.cells.data() + step * d;
        const Scalar* cells_prev = step > 0 ? cache.cells.data() + (step - 1) * d : nullptr;
        for (std::size_t j = 0; j < d; ++j) {
          double gi = gates[j], gf = gates[d + j], gg = gates[2 * d + j],
                 go = gates[3 * d + j];
          double c_now = cells[j];
          double th_c = std::tanh(c_now);
          double dh = static_cast<double>(g.at(tpos, col + j)) + carry_dh[j];
          double dc = carry_dc[j] + dh * go * (1.0 - th_c * th_c);
          double c_prev = cells_prev ? static_cast<double>(cells_prev[j]) : 0.0;
          dpre[j] = static_cast<Scalar>(dc * gg * gi * (1.0 - gi));
          dpre[d + j] = static_cast<Scalar>(dc * c_prev * gf * (1.0 - gf));
          dpre[2 * d + j] = static_cast<Scalar>(dc * gi * (1.0 - gg * gg));
          dpre[3 * d + j] = static_cast<Scalar>(dh * th_c * go * (1.0 - go));
          carry_dc[j] = dc * gf;
        }
        // h_prev of this step lives in the output row processed just before.
        std::size_t tprev = backwards ? tpos + 1 : tpos - 1;  // only if step > 0
        const Scalar* h_prev = step > 0 ? &outv.at(tprev, col) : nullptr;
        std::fill(carry_dh.begin(), carry_dh.end(), 0.0);
        for (std::size_t r = 0; r < 4 * d; ++r) {
          double dp = dpre[r];
          if (dp == 0.0) continue;
          if (gx) {
            Scalar* gxrow = t.grad(x).row_ptr(tpos);
            spectran::detail::axpy(gxrow, dp, twx.data.data() + r * din, din);
          }
          if (gwx) {
            spectran::detail::axpy(t.grad(wx).data.data() + r * din, dp, tx2.row_ptr(tpos),
                                   din);
          }
          if (step > 0) {
            if (gwh) {
              spectran::detail::axpy(t.grad(wh).data.data() + r * d, dp, h_prev, d);
            }
            const Scalar* whrow = twh.data.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) carry_dh[j] += dp * whrow[j];
          }
          if (gb) t.grad(b).data[r] += static_cast<Scalar>(dp);
        }
      }
    };

    run_dir(false, 0, *cache_f, wx_f, wh_f, b_f);
    if (bidirectional) run_dir(true, d, *cache_b, wx_b, wh_b, b_b);
  });
  return v;
}

// ---- convolutional front-end ------------------------------------------------

// Two stacked 7x7 stride-(2,2) conv+ReLU blocks flattened to per-timestep
// features; without the CNN, a stride-4 slice of the raw frames instead.
template <typename Scalar>
typename Tape<Scalar>::Var conv_frontend(Tape<Scalar>& tape, const BoundParams<Scalar>& p,
                                         const ModelConfig& cfg,
                                         const Tensor<Scalar>& source, std::size_t valid,
                                         std::size_t* out_valid) {
  using Var = typename Tape<Scalar>::Var;
  std::size_t T = source.shape[0], F = source.shape[1];
  if (T < 1) throw DimensionError("conv_frontend: empty input");
  if (valid > T) throw DimensionError("conv_frontend: valid exceeds input length");
  std::size_t v1 = ceil_div(valid, 2), v2 = ceil_div(v1, 2);
  if (out_valid) *out_valid = v2;
  if (!cfg.use_cnn) {
    std::size_t rows = ModelConfig::conv_time_len(T);
    Tensor<Scalar> feats(std::vector<std::size_t>{rows, F});
    for (std::size_t i = 0; i < rows; ++i) {
      std::size_t src_row = std::min(4 * i, T - 1);
      std::copy(source.row_ptr(src_row), source.row_ptr(src_row) + F, feats.row_ptr(i));
    }
    return tape.constant(std::move(feats));
  }
  Tensor<Scalar> in(std::vector<std::size_t>{1, T, F});
  std::copy(source.data.begin(), source.data.end(), in.data.begin());
  Var x = tape.constant(std::move(in));
  Var c1 = tape.relu(tape.conv2d(x, p["conv1.kernel"], p["conv1.bias"], kConvStride,
                                 kConvStride, kConvPad, kConvPad));
  if (v1 < tape.val(c1).shape[1]) c1 = tape.zero_time_from(c1, v1);
  Var c2 = tape.relu(tape.conv2d(c1, p["conv2.kernel"], p["conv2.bias"], kConvStride,
                                 kConvStride, kConvPad, kConvPad));
  Var feats = tape.channels_to_time_major(c2);
  if (v2 < tape.val(feats).shape[0]) feats = tape.zero_rows_from(feats, v2);
  return feats;
}

// ---- pyramidal bidirectional encoder ---------------------------------------------

// One plain (B)LSTM layer, then pyramid_layers halving layers that consume
// concatenated adjacent timestep pairs; odd lengths pair with a zero state.
template <typename Scalar>
EncoderOutput<Scalar> pblstm_encode(Tape<Scalar>& tape, const BoundParams<Scalar>& p,
                                    const ModelConfig& cfg,
                                    typename Tape<Scalar>::Var feats, std::size_t valid) {
  using Var = typename Tape<Scalar>::Var;
  auto layer = [&](const std::string& prefix, Var x, std::size_t v) {
    if (cfg.bidirectional) {
      return blstm_seq(tape, x, v, p[prefix + ".fwd.wx"], p[prefix + ".fwd.wh"],
                       p[prefix + ".fwd.b"], true, p[prefix + ".bwd.wx"],
                       p[prefix + ".bwd.wh"], p[prefix + ".bwd.b"]);
    }
    return blstm_seq(tape, x, v, p[prefix + ".fwd.wx"], p[prefix + ".fwd.wh"],
                     p[prefix + ".fwd.b"], false);
  };
  if (valid < 1) throw DimensionError("pblstm_encode: empty sequence");
  Var h = layer("enc.layer0", feats, valid);
  std::size_t v = valid;
  for (std::size_t j = 1; j <= cfg.pyramid_layers; ++j) {
    Var pairs = tape.gather_pairs(h);
    v = ceil_div(v, 2);
    h = layer("enc.pyr" + std::to_string(j), pairs, v);
  }
  EncoderOutput<Scalar> out;
  out.states = h;
  out.valid = v;
  return out;
}

// ---- attention -----------------------------------------------------------------

// Tanh attention: e_j = w . tanh(W s + V h_j + b) over valid encoder states,
// softmax to alignment weights, context = sum_j alpha_j h_j.  VH caches the
// V * h_j products for the whole utterance.  score_shift adds a constant to
// every score; outputs are invariant to it (softmax shift invariance) and
// tests exercise exactly that.
template <typename Scalar>
typename Tape<Scalar>::Var attend(Tape<Scalar>& tape, const BoundParams<Scalar>& p,
                                  typename Tape<Scalar>::Var s_prev,
                                  const EncoderOutput<Scalar>& enc,
                                  typename Tape<Scalar>::Var vh,
                                  Tensor<Scalar>* alpha_out = nullptr,
                                  double score_shift = 0.0) {
  using Var = typename Tape<Scalar>::Var;
  Var W = p["att.W"], V_b = p["att.b"], w = p["att.w"], H = enc.states;
  const Tensor<Scalar>& tH = tape.val(H);
  const Tensor<Scalar>& tVH = tape.val(vh);
  const Tensor<Scalar>& tW = tape.val(W);
  const Tensor<Scalar>& tb = tape.val(V_b);
  const Tensor<Scalar>& tw = tape.val(w);
  const Tensor<Scalar>& ts = tape.val(s_prev);
  std::size_t valid = enc.valid;
  if (valid == 0 || tH.shape[0] < valid) throw DimensionError("attend: empty encoder output");
  std::size_t enc_dim = tH.shape[1];
  std::size_t d_att = tw.numel();

  // u = W s + b
  std::vector<Scalar> u(d_att);
  for (std::size_t r = 0; r < d_att; ++r) {
    u[r] = static_cast<Scalar>(static_cast<double>(tb.data[r]) +
                               spectran::detail::dot(tW.data.data() + r * tW.shape[1],
                                                     ts.data.data(), ts.numel()));
  }
  auto tanh_cache = std::make_shared<Tensor<Scalar>>(
      Tensor<Scalar>(std::vector<std::size_t>{valid, d_att}));
  auto alpha_cache = std::make_shared<std::vector<Scalar>>(valid);
  std::vector<Scalar> scores(valid);
  for (std::size_t j = 0; j < valid; ++j) {
    Scalar* trow = tanh_cache->row_ptr(j);
    const Scalar* vhrow = tVH.row_ptr(j);
    for (std::size_t r = 0; r < d_att; ++r)
      trow[r] = static_cast<Scalar>(std::tanh(static_cast<double>(vhrow[r]) + u[r]));
    scores[j] = static_cast<Scalar>(spectran::detail::dot(tw.data.data(), trow, d_att) +
                                    score_shift);
  }
  Tape<Scalar>::softmax_inplace(alpha_cache->data(), scores.data(), valid);

  Tensor<Scalar> context(std::vector<std::size_t>{enc_dim});
  for (std::size_t j = 0; j < valid; ++j) {
    spectran::detail::axpy(context.data.data(), static_cast<double>((*alpha_cache)[j]),
                           tH.row_ptr(j), enc_dim);
  }
  if (alpha_out) {
    *alpha_out = Tensor<Scalar>(std::vector<std::size_t>{tH.shape[0]});
    for (std::size_t j = 0; j < valid; ++j) alpha_out->data[j] = (*alpha_cache)[j];
  }

  Var v = tape.make_node(std::move(context), {s_prev, H, vh, w, W, V_b});
  tape.set_backward(v, [v, s_prev, H, vh, w, W, V_b, valid, enc_dim, d_att, tanh_cache,
                        alpha_cache](Tape<Scalar>& t) {
    const Tensor<Scalar>& g = t.grad(v);
    const Tensor<Scalar>& tH2 = t.val(H);
    const Tensor<Scalar>& tw2 = t.val(w);
    const Tensor<Scalar>& tW2 = t.val(W);
    const Tensor<Scalar>& ts2 = t.val(s_prev);
    const std::vector<Scalar>& alpha = *alpha_cache;

    std::vector<double> dalpha(valid);
    for (std::size_t j = 0; j < valid; ++j)
      dalpha[j] = spectran::detail::dot(g.data.data(), tH2.row_ptr(j), enc_dim);
    if (t.needs_grad(H)) {
      Tensor<Scalar>& gH = t.grad(H);
      for (std::size_t j = 0; j < valid; ++j)
        spectran::detail::axpy(gH.row_ptr(j), static_cast<double>(alpha[j]),
                               g.data.data(), enc_dim);
    }
    double mean = 0;
    for (std::size_t j = 0; j < valid; ++j) mean += alpha[j] * dalpha[j];
    std::vector<double> du(d_att, 0.0);
    for (std::size_t j = 0; j < valid; ++j) {
      double de = alpha[j] * (dalpha[j] - mean);
      if (de == 0.0) continue;
      const Scalar* trow = tanh_cache->row_ptr(j);
      if (t.needs_grad(w)) {
        spectran::detail::axpy(t.grad(w).data.data(), de, trow, d_att);
      }
      bool want_vh = t.needs_grad(vh);
      Scalar* gvh = want_vh ? t.grad(vh).row_ptr(j) : nullptr;
      for (std::size_t r = 0; r < d_att; ++r) {
        double dpre = de * tw2.data[r] * (1.0 - static_cast<double>(trow[r]) * trow[r]);
        if (want_vh) gvh[r] += static_cast<Scalar>(dpre);
        du[r] += dpre;
      }
    }
    if (t.needs_grad(V_b)) {
      Tensor<Scalar>& gb = t.grad(V_b);
      for (std::size_t r = 0; r < d_att; ++r) gb.data[r] += static_cast<Scalar>(du[r]);
    }
    if (t.needs_grad(W)) {
      Tensor<Scalar>& gW = t.grad(W);
      for (std::size_t r = 0; r < d_att; ++r)
        spectran::detail::axpy(gW.data.data() + r * tW2.shape[1], du[r], ts2.data.data(),
                               ts2.numel());
    }
    if (t.needs_grad(s_prev)) {
      Tensor<Scalar>& gs = t.grad(s_prev);
      for (std::size_t r = 0; r < d_att; ++r)
        spectran::detail::axpy(gs.data.data(), du[r], tW2.data.data() + r * tW2.shape[1],
                               ts2.numel());
    }
  });
  return v;
}

// ---- decoder -----------------------------------------------------------------

template <typename Scalar>
struct DecoderState {
  typename Tape<Scalar>::Var h = 0;
  typename Tape<Scalar>::Var c = 0;
  typename Tape<Scalar>::Var y_prev = 0;  // previous emitted frame group, r*F
};

template <typename Scalar>
struct DecoderStepResult {
  typename Tape<Scalar>::Var frames = 0;  // r*F sigmoid outputs in [0,1]
  typename Tape<Scalar>::Var logits = 0;  // r*F*K, only when the head exists
  bool has_logits = false;
  DecoderState<Scalar> next;
};

// One decoder step: LSTM over [flatten(y_prev), context], then projection
// heads over [state, context].
template <typename Scalar>
DecoderStepResult<Scalar> decoder_step(Tape<Scalar>& tape, const BoundParams<Scalar>& p,
                                       const ModelConfig& cfg,
                                       const DecoderState<Scalar>& state,
                                       typename Tape<Scalar>::Var context) {
  using Var = typename Tape<Scalar>::Var;
  Var x = tape.concat({state.y_prev, context});
  Var hc = tape.lstm_cell(x, state.h, state.c, p["dec.lstm.wx"], p["dec.lstm.wh"],
                          p["dec.lstm.b"]);
  Var h = tape.row(hc, 0);
  Var c = tape.row(hc, 1);
  Var sc = tape.concat({h, context});
  DecoderStepResult<Scalar> res;
  res.frames = tape.sigmoid(tape.linear(p["dec.out.weight"], sc, p["dec.out.bias"]));
  if (cfg.quantize_bins > 0) {
    res.logits = tape.linear(p["dec.cls.weight"], sc, p["dec.cls.bias"]);
    res.has_logits = true;
  }
  res.next.h = h;
  res.next.c = c;
  res.next.y_prev = res.frames;
  return res;
}

// ---- full forward pass -----------------------------------------------------------

enum class DecodeMode { kTeacherForced, kFreeRunning };

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> prediction;              // T_out x F, truncated to the request
  std::vector<typename Tape<Scalar>::Var> step_frames;
  std::vector<typename Tape<Scalar>::Var> step_logits;
  Tensor<Scalar> alpha;                   // steps x T_enc rows (attention only)
  std::size_t enc_valid = 0;
  std::size_t steps = 0;
};

// Runs conv front-end -> pyramidal encoder -> attention decoder.  In
// teacher-forced mode y_prev comes from the ground-truth target; in
// free-running mode the model feeds back its own frames.  target_len is the
// requested output frame count (the true target length when teacher forcing).
template <typename Scalar>
ForwardResult<Scalar> forward(Tape<Scalar>& tape, const BoundParams<Scalar>& p,
                              const ModelConfig& cfg, const Tensor<Scalar>& source,
                              std::size_t src_valid, DecodeMode mode,
                              std::size_t target_len,
                              const Tensor<Scalar>* target = nullptr,
                              double score_shift = 0.0) {
  using Var = typename Tape<Scalar>::Var;
  cfg.validate();
  if (mode == DecodeMode::kTeacherForced && target == nullptr) {
    throw ConfigError("forward: teacher-forced mode requires a target spectrogram");
  }
  if (source.rank() != 2 || source.shape[1] != cfg.freq_bins) {
    throw DimensionError(strcat_msg("forward: source must be Tx", cfg.freq_bins,
                                    ", got ", shape_str(source)));
  }
  if (target_len < 1) throw ConfigError("forward: target length must be >= 1");

  std::size_t conv_valid = 0;
  Var feats = conv_frontend(tape, p, cfg, source, src_valid, &conv_valid);
  EncoderOutput<Scalar> enc = pblstm_encode(tape, p, cfg, feats, conv_valid);

  std::size_t r = cfg.reduction, F = cfg.freq_bins;
  std::size_t steps = cfg.decoder_steps(target_len);
  std::size_t enc_rows = tape.val(enc.states).shape[0];

  Var vh = 0;
  Var enc_last = 0;
  if (cfg.use_attention) {
    vh = tape.matmul(enc.states, tape.transpose(p["att.V"]));
  } else {
    enc_last = tape.row(enc.states, enc.valid - 1);
  }

  ForwardResult<Scalar> out;
  out.enc_valid = enc.valid;
  out.steps = steps;
  if (cfg.use_attention) {
    out.alpha = Tensor<Scalar>(std::vector<std::size_t>{steps, enc_rows});
  }

  DecoderState<Scalar> state;
  state.h = tape.constant(Tensor<Scalar>::zeros({cfg.decoder_dim}));
  state.c = tape.constant(Tensor<Scalar>::zeros({cfg.decoder_dim}));
  state.y_prev = tape.constant(Tensor<Scalar>::zeros({r * F}));  // all-zero go block

  for (std::size_t i = 0; i < steps; ++i) {
    Var context;
    if (cfg.use_attention) {
      Tensor<Scalar> alpha_row;
      context = attend(tape, p, state.h, enc, vh, &alpha_row, score_shift);
      std::copy(alpha_row.data.begin(), alpha_row.data.end(), out.alpha.row_ptr(i));
    } else {
      context = enc_last;
    }
    DecoderStepResult<Scalar> step = decoder_step(tape, p, cfg, state, context);
    out.step_frames.push_back(step.frames);
    if (step.has_logits) out.step_logits.push_back(step.logits);
    state = step.next;
    if (mode == DecodeMode::kTeacherForced) {
      // Ground-truth previous frame group; frames past the target are zero.
      Tensor<Scalar> block(std::vector<std::size_t>{r * F});
      for (std::size_t k = 0; k < r; ++k) {
        std::size_t row = i * r + k;
        if (row < target->shape[0]) {
          std::copy(target->row_ptr(row), target->row_ptr(row) + F,
                    block.data.begin() + k * F);
        }
      }
      state.y_prev = tape.constant(std::move(block));
    }
  }

  out.prediction = Tensor<Scalar>(std::vector<std::size_t>{target_len, F});
  for (std::size_t i = 0; i < steps; ++i) {
    const Tensor<Scalar>& fr = tape.val(out.step_frames[i]);
    for (std::size_t k = 0; k < r; ++k) {
      std::size_t row = i * r + k;
      if (row >= target_len) break;
      std::copy(fr.data.begin() + k * F, fr.data.begin() + (k + 1) * F,
                out.prediction.row_ptr(row));
    }
  }
  return out;
}

// Inference length budget: 1.5x the source frame count.
inline std::size_t free_running_budget(std::size_t src_frames) {
  return std::max<std::size_t>(1, (src_frames * 3 + 1) / 2);
}

// Drops trailing frames whose mean value stays below the silence threshold.
template <typename Scalar>
Tensor<Scalar> trim_trailing_silence(const Tensor<Scalar>& frames, double threshold = 0.02) {
  std::size_t T = frames.shape[0], F = frames.shape[1];
  std::size_t keep = T;
  while (keep > 1) {
    double mean = 0;
    for (std::size_t f = 0; f < F; ++f) mean += static_cast<double>(frames.at(keep - 1, f));
    mean /= static_cast<double>(F);
    if (mean >= threshold) break;
    --keep;
  }
  Tensor<Scalar> out(std::vector<std::size_t>{keep, F});
  std::copy(frames.data.begin(), frames.data.begin() + keep * F, out.data.begin());
  return out;
}

}  // namespace spectran

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
#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "spectran/sha256.hpp"

#include "spectran/corpus.hpp"
#include "spectran/dsp.hpp"
#include "spectran/error.hpp"
#include "spectran/model.hpp"
#include "spectran/tape.hpp"
#include "spectran/wav.hpp"

namespace spectran {

// ---- losses -------------------------------------------------------------------

constexpr double kKlFloor = 1e-8;

struct LossBreakdown {
  double l2 = 0, kl = 0, xent = 0, mixed = 0;
  double lambda_kl = 0, lambda_l2 = 1, lambda_xent = 0;
};

// Masked mean of squared differences over the first valid_rows frames.
template <typename Scalar>
double loss_l2(const Tensor<Scalar>& truth, const Tensor<Scalar>& pred,
               std::size_t valid_rows) {
  if (!truth.same_shape(pred)) {
    throw DimensionError(strcat_msg("loss_l2: shape mismatch ", shape_str(truth), " vs ",
                                    shape_str(pred)));
  }
  std::size_t F = truth.shape[1];
  std::size_t n = std::min(valid_rows, truth.shape[0]) * F;
  if (n == 0) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(truth.data[i]) - static_cast<double>(pred.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(n);
}

// KL(P || Q) with P from the prediction and Q from the ground truth; each
// frame is floored by 1e-8 and normalized to a distribution, and the
// divergence is averaged over valid frames.
template <typename Scalar>
double loss_kl(const Tensor<Scalar>& pred, const Tensor<Scalar>& truth,
               std::size_t valid_rows) {
  if (!truth.same_shape(pred)) {
    throw DimensionError(strcat_msg("loss_kl: shape mismatch ", shape_str(truth), " vs ",
                                    shape_str(pred)));
  }
  std::size_t F = truth.shape[1];
  std::size_t rows = std::min(valid_rows, truth.shape[0]);
  if (rows == 0) return 0.0;
  double total = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    double sp = 0, sq = 0;
    for (std::size_t f = 0; f < F; ++f) {
      sp += static_cast<double>(pred.at(t, f)) + kKlFloor;
      sq += static_cast<double>(truth.at(t, f)) + kKlFloor;
    }
    double frame = 0;
    for (std::size_t f = 0; f < F; ++f) {
      double P = (static_cast<double>(pred.at(t, f)) + kKlFloor) / sp;
      double Q = (static_cast<double>(truth.at(t, f)) + kKlFloor) / sq;
      frame += P * std::log(P / Q);
    }
    total += frame;
  }
  return total / static_cast<double>(rows);
}

// Mean cross-entropy -log softmax(logits)[true bin] over valid cells.
// logits are laid out (rows*F, K) per frame block.
template <typename Scalar>
double loss_xent(const Tensor<Scalar>& logits, const Tensor<std::int32_t>& bins,
                 std::size_t valid_rows, std::size_t F, std::size_t K) {
  std::size_t cells = std::min(valid_rows, bins.shape[0]) * F;
  if (cells == 0) return 0.0;
  if (logits.numel() < cells * K) {
    throw DimensionError(strcat_msg("loss_xent: logits too small: ", logits.numel(),
                                    " < ", cells * K));
  }
  double total = 0;
  for (std::size_t m = 0; m < cells; ++m) {
    std::int32_t bin = bins.data[m];
    if (bin < 0 || static_cast<std::size_t>(bin) >= K) {
      throw DataError(strcat_msg("loss_xent: bin ", bin, " out of range [0,", K, ")"));
    }
    const Scalar* row = logits.data.data() + m * K;
    double mx = -HUGE_VAL;
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    total += mx + std::log(z) - static_cast<double>(row[bin]);
  }
  return total / static_cast<double>(cells);
}

inline void validate_lambdas(double l_kl, double l_l2, double l_xent) {
  if (l_kl < 0 || l_l2 < 0 || l_xent < 0) {
    throw ConfigError(strcat_msg("mixing coefficients must be non-negative, got (", l_kl,
                                 ", ", l_l2, ", ", l_xent, ")"));
  }
}

// Mixed objective: lambda1*KL + lambda2*L2 + lambda3*xent.  Components are
// computed even under a zero coefficient so they can be logged.
template <typename Scalar>
LossBreakdown mixed_loss(const Tensor<Scalar>& truth, const Tensor<Scalar>& pred,
                         const Tensor<Scalar>* logits, const Tensor<std::int32_t>* bins,
                         double l_kl, double l_l2, double l_xent, std::size_t valid_rows,
                         std::size_t K = 0) {
  validate_lambdas(l_kl, l_l2, l_xent);
  LossBreakdown out;
  out.lambda_kl = l_kl;
  out.lambda_l2 = l_l2;
  out.lambda_xent = l_xent;
  out.l2 = loss_l2(truth, pred, valid_rows);
  out.kl = loss_kl(pred, truth, valid_rows);
  if (logits && bins && K > 0) {
    out.xent = loss_xent(*logits, *bins, valid_rows, truth.shape[1], K);
  } else if (l_xent > 0) {
    throw ConfigError("mixed_loss: lambda_xent > 0 but no classification head present");
  }
  out.mixed = l_kl * out.kl + l_l2 * out.l2 + l_xent * out.xent;
  return out;
}

// ---- per-step loss graph nodes -----------------------------------------------

// Sum of squared differences between a predicted frame block (r*F vector)
// and the target rows, over the first valid_rows frames.
template <typename Scalar>
typename Tape<Scalar>::Var sq_err_sum_node(Tape<Scalar>& tape,
                                           typename Tape<Scalar>::Var pred,
                                           Tensor<Scalar> target_block,
                                           std::size_t valid_rows, std::size_t F) {
  const Tensor<Scalar>& tp = tape.val(pred);
  std::size_t n = valid_rows * F;
  if (tp.numel() < n || target_block.numel() < n) {
    throw DimensionError("sq_err_sum: block too small");
  }
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = static_cast<double>(tp.data[i]) - static_cast<double>(target_block.data[i]);
    acc += d * d;
  }
  auto target = std::make_shared<Tensor<Scalar>>(std::move(target_block));
  auto v = tape.make_node(Tensor<Scalar>::full({1}, static_cast<Scalar>(acc)), {pred});
  tape.set_backward(v, [v, pred, target, n](Tape<Scalar>& t) {
    if (!t.needs_grad(pred)) return;
    double g = static_cast<double>(t.grad(v).data[0]);
    const Tensor<Scalar>& tp2 = t.val(pred);
    Tensor<Scalar>& gp = t.grad(pred);
    for (std::size_t i = 0; i < n; ++i) {
      gp.data[i] += static_cast<Scalar>(
          2.0 * g * (static_cast<double>(tp2.data[i]) - target->data[i]));
    }
  });
  return v;
}

// Sum over valid frames of KL(P_frame || Q_frame); P is the prediction after
// the floor-and-normalize map, so gradients flow through the normalization.
template <typename Scalar>
typename Tape<Scalar>::Var kl_sum_node(Tape<Scalar>& tape, typename Tape<Scalar>::Var pred,
                                       Tensor<Scalar> target_block, std::size_t valid_rows,
                                       std::size_t F) {
  const Tensor<Scalar>& tp = tape.val(pred);
  if (tp.numel() < valid_rows * F || target_block.numel() < valid_rows * F) {
    throw DimensionError("kl_sum: block too small");
  }
  double total = 0;
  for (std::size_t t = 0; t < valid_rows; ++t) {
    double sp = 0, sq = 0;
    for (std::size_t f = 0; f < F; ++f) {
      sp += static_cast<double>(tp.data[t * F + f]) + kKlFloor;
      sq += static_cast<double>(target_block.data[t * F + f]) + kKlFloor;
    }
    for (std::size_t f = 0; f < F; ++f) {
      double P = (static_cast<double>(tp.data[t * F + f]) + kKlFloor) / sp;
      double Q = (static_cast<double>(target_block.data[t * F + f]) + kKlFloor) / sq;
      total += P * std::log(P / Q);
    }
  }
  auto target = std::make_shared<Tensor<Scalar>>(std::move(target_block));
  auto v = tape.make_node(Tensor<Scalar>::full({1}, static_cast<Scalar>(total)), {pred});
  tape.set_backward(v, [v, pred, target, valid_rows, F](Tape<Scalar>& t) {
    if (!t.needs_grad(pred)) return;
    double g = static_cast<double>(t.grad(v).data[0]);
    const Tensor<Scalar>& tp2 = t.val(pred);
    Tensor<Scalar>& gp = t.grad(pred);
    for (std::size_t tt = 0; tt < valid_rows; ++tt) {
      double sp = 0, sq = 0;
      for (std::size_t f = 0; f < F; ++f) {
        sp += static_cast<double>(tp2.data[tt * F + f]) + kKlFloor;
        sq += static_cast<double>(target->data[tt * F + f]) + kKlFloor;
      }
      double frame_kl = 0;
      for (std::size_t f = 0; f < F; ++f) {
        double P = (static_cast<double>(tp2.data[tt * F + f]) + kKlFloor) / sp;
        double Q = (static_cast<double>(target->data[tt * F + f]) + kKlFloor) / sq;
        frame_kl += P * std::log(P / Q);
      }
      for (std::size_t f = 0; f < F; ++f) {
        double P = (static_cast<double>(tp2.data[tt * F + f]) + kKlFloor) / sp;
        double Q = (static_cast<double>(target->data[tt * F + f]) + kKlFloor) / sq;
        gp.data[tt * F + f] +=
            static_cast<Scalar>(g * (std::log(P / Q) - frame_kl) / sp);
      }
    }
  });
  return v;
}

// Sum of -log softmax(logits)[true bin] over the first valid_rows*F cells.
template <typename Scalar>
typename Tape<Scalar>::Var xent_sum_node(Tape<Scalar>& tape,
                                         typename Tape<Scalar>::Var logits,
                                         Tensor<std::int32_t> bins_block,
                                         std::size_t valid_rows, std::size_t F,
                                         std::size_t K) {
  const Tensor<Scalar>& tl = tape.val(logits);
  std::size_t cells = valid_rows * F;
  if (tl.numel() < cells * K || bins_block.numel() < cells) {
    throw DimensionError("xent_sum: block too small");
  }
  double total = 0;
  for (std::size_t m = 0; m < cells; ++m) {
    std::int32_t bin = bins_block.data[m];
    if (bin < 0 || static_cast<std::size_t>(bin) >= K) {
      throw DataError(strcat_msg("xent_sum: bin ", bin, " out of range [0,", K, ")"));
    }
    const Scalar* row = tl.data.data() + m * K;
    double mx = -HUGE_VAL;
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    total += mx + std::log(z) - static_cast<double>(row[bin]);
  }
  auto bins = std::make_shared<Tensor<std::int32_t>>(std::move(bins_block));
  auto v = tape.make_node(Tensor<Scalar>::full({1}, static_cast<Scalar>(total)), {logits});
  tape.set_backward(v, [v, logits, bins, cells, K](Tape<Scalar>& t) {
    if (!t.needs_grad(logits)) return;
    double g = static_cast<double>(t.grad(v).data[0]);
    const Tensor<Scalar>& tl2 = t.val(logits);
    Tensor<Scalar>& gl = t.grad(logits);
    std::vector<double> soft(K);
    for (std::size_t m = 0; m < cells; ++m) {
      const Scalar* row = tl2.data.data() + m * K;
      double mx = -HUGE_VAL;
      for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]));
      double z = 0;
      for (std::size_t k = 0; k < K; ++k) {
        soft[k] = std::exp(static_cast<double>(row[k]) - mx);
        z += soft[k];
      }
      Scalar* grow = gl.data.data() + m * K;
      for (std::size_t k = 0; k < K; ++k)
        grow[k] += static_cast<Scalar>(g * (soft[k] / z));
      grow[bins->data[m]] -= static_cast<Scalar>(g);
    }
  });
  return v;
}

// ---- optimizer ---------------------------------------------------------------

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

template <typename Scalar>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;

  static AdamState init(const ParamStore<Scalar>& store) {
    AdamState s;
    for (const auto& e : store.entries()) {
      Tensor<Scalar> zm;
      zm.shape = e.value.shape;
      zm.data.assign(e.value.numel(), Scalar(0));
      s.m.push_back(zm);
      s.v.push_back(std::move(zm));
    }
    return s;
  }
};

// Global-norm clipping followed by a bias-corrected Adam update.
template <typename Scalar>
void optimizer_step(ParamStore<Scalar>& store, AdamState<Scalar>& adam,
                    double learning_rate, double grad_clip_norm) {
  double sq_norm = 0;
  for (const auto& e : store.entries()) {
    double local = 0;
    for (Scalar g : e.grad.data) local += static_cast<double>(g) * g;
    if (!std::isfinite(local)) {
      throw NumericError(strcat_msg("non-finite gradient in tensor ", e.name));
    }
    sq_norm += local;
  }
  double norm = std::sqrt(sq_norm);
  double scale = (grad_clip_norm > 0 && norm > grad_clip_norm) ? grad_clip_norm / norm : 1.0;

  adam.step += 1;
  double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
  double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
  auto& entries = store.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Tensor<Scalar>& value = entries[p].value;
    const Tensor<Scalar>& grad = entries[p].grad;
    Tensor<Scalar>& m = adam.m[p];
    Tensor<Scalar>& v = adam.v[p];
    for (std::size_t i = 0; i < value.numel(); ++i) {
      double g = static_cast<double>(grad.data[i]) * scale;
      double mi = kAdamBeta1 * static_cast<double>(m.data[i]) + (1.0 - kAdamBeta1) * g;
      double vi = kAdamBeta2 * static_cast<double>(v.data[i]) + (1.0 - kAdamBeta2) * g * g;
      m.data[i] = static_cast<Scalar>(mi);
      v.data[i] = static_cast<Scalar>(vi);
      double update = learning_rate * (mi / c1) / (std::sqrt(vi / c2) + kAdamEps);
      value.data[i] = static_cast<Scalar>(static_cast<double>(value.data[i]) - update);
    }
  }
}

// ---- checkpoints -----------------------------------------------------------------

// Binary layout: "ETCK", u32 format_version, 32-byte config hash, u64 step,
// u32 table count, then per-tensor records (u32 name length, name bytes,
// u32 rank, u64 extents, u32 dtype tag, u64 absolute payload offset),
// followed by the raw little-endian payloads.
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;
constexpr std::uint32_t kDtypeF64 = 1;
constexpr std::uint32_t kDtypeU64 = 2;

struct CheckpointRecord {
  std::string name;
  std::vector<std::uint64_t> extents;
  std::uint32_t dtype = kDtypeF32;
  std::uint64_t offset = 0;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
  std::uint64_t byte_size() const { return numel() * (dtype == kDtypeF32 ? 4 : 8); }
};

namespace detail {

template <typename T>
void write_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(const std::string& bytes, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > bytes.size()) {
    throw DataError(strcat_msg(path, ": truncated checkpoint at offset ", pos));
  }
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

template <typename Scalar>
constexpr std::uint32_t dtype_of() {
  return sizeof(Scalar) == 4 ? kDtypeF32 : kDtypeF64;
}

// Serializes parameters, optimizer moments, and the run seed.
template <typename Scalar>
void save_checkpoint(const std::string& path, const ParamStore<Scalar>& store,
                     const AdamState<Scalar>* adam, std::uint64_t step,
                     const std::array<std::uint8_t, 32>& config_hash,
                     std::uint64_t seed) {
  struct Item {
    std::string name;
    const void* data;
    std::vector<std::uint64_t> extents;
    std::uint32_t dtype;
    std::uint64_t bytes;
  };
  std::vector<Item> items;
  auto add_tensor = [&](const std::string& name, const Tensor<Scalar>& t) {
    Item it;
    it.name = name;
    it.data = t.data.data();
    for (auto e : t.shape) it.extents.push_back(e);
    if (it.extents.empty()) it.extents.push_back(t.numel());
    it.dtype = dtype_of<Scalar>();
    it.bytes = t.numel() * sizeof(Scalar);
    items.push_back(std::move(it));
  };
  for (const auto& e : store.entries()) add_tensor(e.name, e.value);
  if (adam) {
    const auto& entries = store.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      add_tensor("adam.m." + entries[p].name, adam->m[p]);
      add_tensor("adam.v." + entries[p].name, adam->v[p]);
    }
  }
  Item seed_item;
  seed_item.name = "meta.seed";
  seed_item.data = &seed;
  seed_item.extents = {1};
  seed_item.dtype = kDtypeU64;
  seed_item.bytes = 8;
  items.push_back(seed_item);

  // Two passes: sizes first so offsets are absolute file positions.
  std::size_t header_size = 4 + 4 + 32 + 8 + 4;
  std::size_t table_size = 0;
  for (const auto& it : items) table_size += 4 + it.name.size() + 4 + 8 * it.extents.size() + 4 + 8;
  std::uint64_t offset = header_size + table_size;

  std::string out;
  out += "ETCK";
  detail::write_pod(out, kCheckpointVersion);
  out.append(reinterpret_cast<const char*>(config_hash.data()), 32);
  detail::write_pod(out, step);
  detail::write_pod(out, static_cast<std::uint32_t>(items.size()));
  for (const auto& it : items) {
    detail::write_pod(out, static_cast<std::uint32_t>(it.name.size()));
    out += it.name;
    detail::write_pod(out, static_cast<std::uint32_t>(it.extents.size()));
    for (auto e : it.extents) detail::write_pod(out, e);
    detail::write_pod(out, it.dtype);
    detail::write_pod(out, offset);
    offset += it.bytes;
  }
  for (const auto& it : items) {
    out.append(reinterpret_cast<const char*>(it.data), it.bytes);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open for writing: ", path));
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError(strcat_msg("short write: ", path));
}

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::array<std::uint8_t, 32> config_hash{};
  std::uint64_t step = 0;
  std::vector<CheckpointRecord> table;
};

inline CheckpointHeader read_checkpoint_header(const std::string& path,
                                               std::string* raw_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(strcat_msg("cannot open checkpoint: ", path));
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 52 || bytes.compare(0, 4, "ETCK") != 0) {
    throw DataError(strcat_msg(path, ": corrupt header (missing ETCK magic)"));
  }
  std::size_t pos = 4;
  CheckpointHeader h;
  h.version = detail::read_pod<std::uint32_t>(bytes, pos, path);
  std::memcpy(h.config_hash.data(), bytes.data() + pos, 32);
  pos += 32;
  h.step = detail::read_pod<std::uint64_t>(bytes, pos, path);
  std::uint32_t count = detail::read_pod<std::uint32_t>(bytes, pos, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    std::uint32_t name_len = detail::read_pod<std::uint32_t>(bytes, pos, path);
    if (pos + name_len > bytes.size()) {
      throw DataError(strcat_msg(path, ": truncated tensor table"));
    }
    r.name.assign(bytes.data() + pos, name_len);
    pos += name_len;
    std::uint32_t rank = detail::read_pod<std::uint32_t>(bytes, pos, path);
    for (std::uint32_t k = 0; k < rank; ++k)
      r.extents.push_back(detail::read_pod<std::uint64_t>(bytes, pos, path));
    r.dtype = detail::read_pod<std::uint32_t>(bytes, pos, path);
    r.offset = detail::read_pod<std::uint64_t>(bytes, pos, path);
    if (r.offset + r.byte_size() > bytes.size()) {
      throw DataError(strcat_msg(path, ": tensor ", r.name, " payload extends past EOF"));
    }
    h.table.push_back(std::move(r));
  }
  if (raw_out) *raw_out = std::move(bytes);
  return h;
}

// Loads parameters (and moments, when present) back into a matching store.
// Refuses version or config-hash mismatches unless ignore_hash is set.
template <typename Scalar>
CheckpointHeader load_checkpoint(const std::string& path, ParamStore<Scalar>& store,
                                 AdamState<Scalar>* adam,
                                 const std::array<std::uint8_t, 32>& expected_hash,
                                 bool ignore_hash = false, std::uint64_t* seed_out = nullptr) {
  std::string bytes;
  CheckpointHeader h = read_checkpoint_header(path, &bytes);
  if (h.version != kCheckpointVersion) {
    throw DataError(strcat_msg(path, ": format_version ", h.version, ", expected ",
                               kCheckpointVersion));
  }
  if (!ignore_hash && h.config_hash != expected_hash) {
    std::array<std::uint8_t, 32> a = h.config_hash;
    throw ConfigError(strcat_msg(path, ": config hash mismatch: checkpoint ",
                                 Sha256::to_hex(a), " vs current ",
                                 Sha256::to_hex(expected_hash),
                                 " (pass the override to load anyway)"));
  }
  auto read_into = [&](const CheckpointRecord& r, Tensor<Scalar>& t) {
    if (r.dtype != dtype_of<Scalar>()) {
      throw DataError(strcat_msg(path, ": tensor ", r.name, " has dtype tag ", r.dtype,
                                 ", expected ", dtype_of<Scalar>()));
    }
    if (r.numel() != t.numel()) {
      throw DataError(strcat_msg(path, ": tensor ", r.name, " has ", r.numel(),
                                 " elements, expected ", t.numel()));
    }
    std::memcpy(t.data.data(), bytes.data() + r.offset, r.byte_size());
  };
  std::size_t found = 0;
  for (const auto& r : h.table) {
    if (r.name == "meta.seed") {
      if (seed_out) std::memcpy(seed_out, bytes.data() + r.offset, 8);
      continue;
    }
    if (r.name.rfind("adam.m.", 0) == 0 || r.name.rfind("adam.v.", 0) == 0) {
      if (!adam) continue;
      std::string pname = r.name.substr(7);
      const auto& entries = store.entries();
      for (std::size_t p = 0; p < entries.size(); ++p) {
        if (entries[p].name == pname) {
          read_into(r, r.name[5] == 'm' ? adam->m[p] : adam->v[p]);
          break;
        }
      }
      continue;
    }
    if (store.contains(r.name)) {
      read_into(r, store.at(r.name).value);
      ++found;
    } else {
      throw DataError(strcat_msg(path, ": unexpected tensor ", r.name));
    }
  }
  if (found != store.entries().size()) {
    throw DataError(strcat_msg(path, ": checkpoint holds ", found, " of ",
                               store.entries().size(), " model tensors"));
  }
  if (adam) adam->step = h.step;
  return h;
}

// ---- dataset -----------------------------------------------------------------

template <typename Scalar>
struct TrainItem {
  UtteranceRecord record;
  Tensor<Scalar> source;            // T_src x F, normalized spectrogram
  Tensor<Scalar> target;            // T_tgt x F
  Tensor<std::int32_t> target_bins; // only when a classification head is trained
};

template <typename Scalar>
std::vector<TrainItem<Scalar>> load_dataset(const std::string& manifest_path,
                                            const CorpusManifest& manifest,
                                            std::size_t quantize_bins) {
  namespace fs = std::filesystem;
  fs::path base = fs::path(manifest_path).parent_path();
  std::vector<TrainItem<Scalar>> items;
  items.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    TrainItem<Scalar> item;
    item.record = rec;
    Spectrogram src = to_spectrogram(read_wav((base / rec.source_wav_path).string()));
    Spectrogram tgt = to_spectrogram(read_wav((base / rec.target_wav_path).string()));
    item.source = src.frames.template cast<Scalar>();
    item.target = tgt.frames.template cast<Scalar>();
    if (quantize_bins > 0) item.target_bins = quantize(tgt, quantize_bins).bins;
    items.push_back(std::move(item));
  }
  return items;
}

// ---- training configuration ------------------------------------------------------

struct TrainConfig {
  double lambda_kl = 0.0;
  double lambda_l2 = 1.0;
  double lambda_xent = 0.0;
  double learning_rate = 1e-3;
  double grad_clip_norm = 5.0;
  std::size_t batch_size = 4;
  std::uint64_t max_steps = 2000;
  std::uint64_t seed = 1;
  bool teacher_forcing = true;
  std::uint64_t checkpoint_interval = 500;
  std::string holdout_speaker;   // empty: no speaker held out
  std::size_t holdout_every = 0;  // >0: every k-th utterance held out

  void validate() const {
    validate_lambdas(lambda_kl, lambda_l2, lambda_xent);
    if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!holdout_speaker.empty() && holdout_every > 0) {
      throw ConfigError("train: choose speaker or utterance holdout, not both");
    }
  }
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> held_out;
};

template <typename Scalar>
DatasetSplit split_dataset(const std::vector<TrainItem<Scalar>>& items,
                           const TrainConfig& cfg) {
  DatasetSplit split;
  for (std::size_t i = 0; i < items.size(); ++i) {
    bool held = false;
    if (!cfg.holdout_speaker.empty()) held = items[i].record.speaker_id == cfg.holdout_speaker;
    if (cfg.holdout_every > 0) held = (i % cfg.holdout_every) == cfg.holdout_every - 1;
    (held ? split.held_out : split.train).push_back(i);
  }
  if (split.train.empty()) throw ConfigError("train: empty training split");
  return split;
}

// ---- metrics log -------------------------------------------------------------

constexpr const char* kMetricsHeader = "step,l2,kl,xent,mixed,wall_ms";

struct MetricsRow {
  std::uint64_t step = 0;
  double l2 = 0, kl = 0, xent = 0, mixed = 0;
  double wall_ms = 0;
};

inline std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  std::vector<MetricsRow> rows;
  if (!f) return rows;
  std::string line;
  if (!std::getline(f, line)) return rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    MetricsRow r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf,%lf", &step, &r.l2, &r.kl,
                    &r.xent, &r.mixed, &r.wall_ms) != 6) {
      throw DataError(strcat_msg(path, ": malformed metrics row '", line, "'"));
    }
    r.step = step;
    rows.push_back(r);
  }
  return rows;
}

// ---- fit -----------------------------------------------------------------------

template <typename Scalar>
struct FitResult {
  std::uint64_t steps_run = 0;
  double final_train_l2 = 0;  // teacher-forced masked MSE over the training split
  std::string final_checkpoint;
  LossBreakdown last_step;
};

namespace detail {

// Stateless batch schedule: global slot g maps through a per-epoch
// Fisher-Yates permutation, so resuming at any step replays the same order.
inline std::size_t batch_item(std::uint64_t seed, std::uint64_t slot, std::size_t n) {
  std::uint64_t epoch = slot / n;
  std::uint64_t pos = slot % n;
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, "epoch-order", epoch));
  for (std::size_t i = n; i-- > 1;) {
    std::size_t j = rng.next_below(i + 1);
    std::swap(perm[i], perm[j]);
  }
  return perm[pos];
}

template <typename Scalar>
Tensor<Scalar> pad_rows(const Tensor<Scalar>& m, std::size_t rows) {
  if (m.shape[0] == rows) return m;
  Tensor<Scalar> out(std::vector<std::size_t>{rows, m.shape[1]});
  std::copy(m.data.begin(), m.data.end(), out.data.begin());
  return out;
}

}  // namespace detail

// Teacher-forced masked MSE of the current parameters over a list of items.
template <typename Scalar>
double dataset_l2(ParamStore<Scalar>& params, const ModelConfig& cfg,
                  const std::vector<TrainItem<Scalar>>& items,
                  const std::vector<std::size_t>& indices, bool teacher_forced = true) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t idx : indices) {
    const TrainItem<Scalar>& item = items[idx];
    Tape<Scalar> tape;
    tape.set_grad_enabled(false);
    BoundParams<Scalar> bound(tape, params);
    ForwardResult<Scalar> fwd =
        forward(tape, bound, cfg, item.source, item.source.shape[0],
                teacher_forced ? DecodeMode::kTeacherForced : DecodeMode::kFreeRunning,
                item.target.shape[0], &item.target);
    std::size_t n = item.target.numel();
    sum += loss_l2(item.target, fwd.prediction, item.target.shape[0]) *
           static_cast<double>(n);
    count += n;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

// The optimization loop: teacher-forced forward, mixed loss, backward, Adam,
// per-step CSV row, periodic checkpoints.  Deterministic given the seed; a
// resumed run continues the exact step sequence of an uninterrupted one.
template <typename Scalar>
FitResult<Scalar> fit(std::vector<TrainItem<Scalar>>& items, const DatasetSplit& split,
                      const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const std::string& out_dir,
                      const std::array<std::uint8_t, 32>& config_hash, bool resume = false,
                      std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  mcfg.validate();
  tcfg.validate();
  if (tcfg.lambda_xent > 0 && mcfg.quantize_bins == 0) {
    throw ConfigError("train: lambda_xent > 0 requires model.quantize_bins > 0");
  }
  fs::create_directories(out_dir);

  ParamStore<Scalar> params = init_params<Scalar>(mcfg, tcfg.seed);
  AdamState<Scalar> adam = AdamState<Scalar>::init(params);
  std::uint64_t start_step = 0;

  auto ckpt_path = [&](std::uint64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%08llu.etck",
                  static_cast<unsigned long long>(step));
    return (fs::path(out_dir) / buf).string();
  };

  std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  std::vector<MetricsRow> history;

  if (resume) {
    std::uint64_t best = 0;
    bool found = false;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
      std::string name = entry.path().filename().string();
      unsigned long long step = 0;
      if (std::sscanf(name.c_str(), "ckpt_%llu.etck", &step) == 1) {
        if (!found || step > best) best = step;
        found = true;
      }
    }
    if (found) {
      load_checkpoint(ckpt_path(best), params, &adam, config_hash);
      start_step = best;
      for (const MetricsRow& r : read_metrics_csv(metrics_path)) {
        if (r.step <= start_step) history.push_back(r);
      }
    }
  }

  auto write_metrics = [&]() {
    std::ofstream f(metrics_path, std::ios::trunc);
    f << kMetricsHeader << "\n";
    for (const auto& r : history) {
      f << r.step << ',' << r.l2 << ',' << r.kl << ',' << r.xent << ',' << r.mixed << ','
        << r.wall_ms << "\n";
    }
  };
  write_metrics();
  std::ofstream metrics(metrics_path, std::ios::app);

  const std::size_t F = mcfg.freq_bins;
  const std::size_t n_train = split.train.size();
  auto t_start = std::chrono::steady_clock::now();
  FitResult<Scalar> result;

  for (std::uint64_t step = start_step + 1; step <= tcfg.max_steps; ++step) {
    params.zero_grads();

    // Assemble the batch and pad it to its max lengths.
    std::vector<std::size_t> batch;
    std::size_t max_src = 0, max_tgt = 0;
    for (std::size_t i = 0; i < tcfg.batch_size; ++i) {
      std::uint64_t slot = (step - 1) * tcfg.batch_size + i;
      std::size_t idx = split.train[detail::batch_item(tcfg.seed, slot, n_train)];
      batch.push_back(idx);
      max_src = std::max(max_src, items[idx].source.shape[0]);
      max_tgt = std::max(max_tgt, items[idx].target.shape[0]);
    }

    struct ItemGraph {
      std::unique_ptr<Tape<Scalar>> tape;
      typename Tape<Scalar>::Var l2_sum = 0, kl_sum = 0, xent_sum = 0;
      Tensor<Scalar> padded_src, padded_tgt;
      double plain_l2 = 0, plain_kl = 0, plain_xent = 0;
      std::size_t frames = 0;
    };
    std::vector<ItemGraph> graphs(batch.size());
    std::size_t total_frames = 0;

    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      TrainItem<Scalar>& item = items[batch[bi]];
      ItemGraph& ig = graphs[bi];
      ig.tape = std::make_unique<Tape<Scalar>>();
      ig.padded_src = detail::pad_rows(item.source, max_src);
      ig.padded_tgt = detail::pad_rows(item.target, max_tgt);
      ig.frames = item.target.shape[0];
      total_frames += ig.frames;
      Tape<Scalar>& tape = *ig.tape;
      BoundParams<Scalar> bound(tape, params);
      ForwardResult<Scalar> fwd = forward(
          tape, bound, mcfg, ig.padded_src, item.source.shape[0],
          tcfg.teacher_forcing ? DecodeMode::kTeacherForced : DecodeMode::kFreeRunning,
          item.target.shape[0], &ig.padded_tgt);

      // Per-step loss nodes over the valid frames of each frame block.
      std::vector<std::pair<double, typename Tape<Scalar>::Var>> l2_terms, kl_terms,
          xent_terms;
      std::size_t r = mcfg.reduction;
      for (std::size_t si = 0; si < fwd.steps; ++si) {
        std::size_t row0 = si * r;
        if (row0 >= ig.frames) break;
        std::size_t valid_rows = std::min(r, ig.frames - row0);
        Tensor<Scalar> block(std::vector<std::size_t>{r, F});
        for (std::size_t k = 0; k < valid_rows; ++k) {
          std::copy(item.target.row_ptr(row0 + k), item.target.row_ptr(row0 + k) + F,
                    block.row_ptr(k));
        }
        if (tcfg.lambda_l2 > 0) {
          l2_terms.emplace_back(1.0, sq_err_sum_node(tape, fwd.step_frames[si],
                                                     block, valid_rows, F));
        }
        if (tcfg.lambda_kl > 0) {
          kl_terms.emplace_back(1.0, kl_sum_node(tape, fwd.step_frames[si], block,
                                                 valid_rows, F));
        }
        if (tcfg.lambda_xent > 0) {
          Tensor<std::int32_t> bins(std::vector<std::size_t>{r, F});
          for (std::size_t k = 0; k < valid_rows; ++k) {
            std::copy(&item.target_bins.at(row0 + k, 0), &item.target_bins.at(row0 + k, 0) + F,
                      bins.row_ptr(k));
          }
          xent_terms.emplace_back(1.0, xent_sum_node(tape, fwd.step_logits[si],
                                                     std::move(bins), valid_rows, F,
                                                     mcfg.quantize_bins));
        }
      }
      if (!l2_terms.empty()) ig.l2_sum = tape.combine_scalars(l2_terms);
      if (!kl_terms.empty()) ig.kl_sum = tape.combine_scalars(kl_terms);
      if (!xent_terms.empty()) ig.xent_sum = tape.combine_scalars(xent_terms);

      // Logged components (all of them, even those with a zero coefficient).
      ig.plain_l2 = loss_l2(item.target, fwd.prediction, ig.frames);
      ig.plain_kl = loss_kl(fwd.prediction, item.target, ig.frames);
      if (mcfg.quantize_bins > 0 && !fwd.step_logits.empty()) {
        // Flatten step logits into one (frames*F, K) view for the metric.
        Tensor<Scalar> logits(
            std::vector<std::size_t>{fwd.steps * r * F, mcfg.quantize_bins});
        for (std::size_t si = 0; si < fwd.steps; ++si) {
          const Tensor<Scalar>& lv = tape.val(fwd.step_logits[si]);
          std::copy(lv.data.begin(), lv.data.end(),
                    logits.data.begin() + si * r * F * mcfg.quantize_bins);
        }
        ig.plain_xent = loss_xent(logits, item.target_bins, ig.frames, F,
                                  mcfg.quantize_bins);
      }
    }

    std::size_t total_cells = total_frames * F;
    double batch_l2 = 0, batch_kl = 0, batch_xent = 0;
    for (auto& ig : graphs) {
      double w = static_cast<double>(ig.frames) / static_cast<double>(total_frames);
      batch_l2 += ig.plain_l2 * w;
      batch_kl += ig.plain_kl * w;
      batch_xent += ig.plain_xent * w;
    }

    // Root per item; gradients accumulate across items into the shared sinks.
    for (auto& ig : graphs) {
      std::vector<std::pair<double, typename Tape<Scalar>::Var>> terms;
      if (tcfg.lambda_l2 > 0) {
        terms.emplace_back(tcfg.lambda_l2 / static_cast<double>(total_cells), ig.l2_sum);
      }
      if (tcfg.lambda_kl > 0) {
        terms.emplace_back(tcfg.lambda_kl / static_cast<double>(total_frames), ig.kl_sum);
      }
      if (tcfg.lambda_xent > 0) {
        terms.emplace_back(tcfg.lambda_xent / static_cast<double>(total_cells),
                           ig.xent_sum);
      }
      if (terms.empty()) continue;
      Tape<Scalar>& tape = *ig.tape;
      tape.backward(tape.combine_scalars(terms));
    }
    graphs.clear();

    optimizer_step(params, adam, tcfg.learning_rate, tcfg.grad_clip_norm);

    MetricsRow row;
    row.step = step;
    row.l2 = batch_l2;
    row.kl = batch_kl;
    row.xent = batch_xent;
    row.mixed = tcfg.lambda_kl * batch_kl + tcfg.lambda_l2 * batch_l2 +
                tcfg.lambda_xent * batch_xent;
    row.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t_start)
                      .count();
    metrics << row.step << ',' << row.l2 << ',' << row.kl << ',' << row.xent << ','
            << row.mixed << ',' << row.wall_ms << "\n";
    metrics.flush();
    result.last_step = {row.l2, row.kl, row.xent, row.mixed,
                        tcfg.lambda_kl, tcfg.lambda_l2, tcfg.lambda_xent};

    if (tcfg.checkpoint_interval > 0 && step % tcfg.checkpoint_interval == 0 &&
        step != tcfg.max_steps) {
      save_checkpoint(ckpt_path(step), params, &adam, step, config_hash, tcfg.seed);
    }
    if (progress && (step % 100 == 0 || step == tcfg.max_steps)) {
      (*progress) << "step " << step << "/" << tcfg.max_steps << " l2=" << row.l2
                  << " mixed=" << row.mixed << "\n";
      progress->flush();
    }
  }

  result.steps_run = tcfg.max_steps;
  result.final_checkpoint = ckpt_path(tcfg.max_steps);
  save_checkpoint(result.final_checkpoint, params, &adam, tcfg.max_steps, config_hash,
                  tcfg.seed);
  result.final_train_l2 = dataset_l2(params, mcfg, items, split.train);
  return result;
}

}  // namespace spectran

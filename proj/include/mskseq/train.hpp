// mskseq/train.hpp
//
// Training machinery: the masked-MSE and label-smoothed CE losses, the
// Noam learning-rate schedule, bias-corrected Adam, checkpoint files
// ("MSKC") with averaging, and the stage runner that drives acoustic
// pre-training, linguistic pre-training, and in-domain post-training.
//
// Checkpoint file layout (little-endian):
//   bytes 0..3  magic "MSKC"
//   u32         version (currently 1)
//   u64         fingerprint (hash of sorted tensor names/shapes + dtype)
//   u32         dtype size in bytes (4 = f32, 8 = f64)
//   u64         step
//   u32 + str   stage tag
//   u32         parameter entry count, then per entry:
//                 u32 + str name, u32 rows, u32 cols, rows*cols values
//   u8          has_optimizer; if 1:
//                 u64 adam step t, then first/second moment tables in the
//                 same entry format
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mskseq/autodiff.hpp"
#include "mskseq/config.hpp"
#include "mskseq/errors.hpp"
#include "mskseq/io.hpp"
#include "mskseq/manifest.hpp"
#include "mskseq/mask.hpp"
#include "mskseq/matrix.hpp"
#include "mskseq/nnet.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

// ------------------------------------------------------------------ losses

// Loss = 1/(B*K) * sum_b sum_i sum_{t in f_i} || x_{b,t} - xhat_{b,t} ||^2.
// Frames outside every chunk contribute nothing; a frame inside two chunks
// is counted once per containing chunk. Kept (non-zeroed) chunks are
// prediction targets too.
template <typename Real>
Real masked_mse_loss(const std::vector<Matrix<Real>>& x,
                     const std::vector<Matrix<Real>>& x_hat,
                     const std::vector<MaskPlan>& plans) {
  if (x.empty() || x.size() != x_hat.size() || x.size() != plans.size())
    throw DataError("masked_mse_loss: batch size mismatch");
  const std::size_t k = plans.front().chunks.size();
  Real total = 0;
  for (std::size_t b = 0; b < x.size(); ++b) {
    if (!x[b].same_shape(x_hat[b]))
      throw DataError("masked_mse_loss: prediction shape mismatch in batch item " +
                      std::to_string(b));
    if (plans[b].num_frames != x[b].rows())
      throw DataError("masked_mse_loss: plan length " +
                      std::to_string(plans[b].num_frames) + " != feature length " +
                      std::to_string(x[b].rows()) + " in batch item " +
                      std::to_string(b));
    if (plans[b].chunks.size() != k)
      throw DataError("masked_mse_loss: inconsistent chunk count across batch");
    for (const auto& chunk : plans[b].chunks)
      for (std::size_t t = chunk.start; t <= chunk.end; ++t) {
        const Real* xr = x[b].row(t).data();
        const Real* hr = x_hat[b].row(t).data();
        Real acc = 0;
        for (std::size_t j = 0; j < x[b].cols(); ++j) {
          const Real diff = xr[j] - hr[j];
          acc += diff * diff;
        }
        total += acc;
      }
  }
  return total / (static_cast<Real>(x.size()) * static_cast<Real>(k));
}

// Per-chunk multiplicity of each frame (how many chunks contain it); used
// as row weights so the in-graph loss matches masked_mse_loss exactly.
template <typename Real>
std::vector<Real> chunk_multiplicity(const MaskPlan& plan) {
  std::vector<Real> mult(plan.num_frames, Real(0));
  for (const auto& chunk : plan.chunks)
    for (std::size_t t = chunk.start; t <= chunk.end; ++t) mult[t] += Real(1);
  return mult;
}

// Mean over non-pad positions of -sum_v q_v log p_v with
// q = (1 - eps) * onehot(target) + eps/V.
template <typename Real>
Real smoothed_ce_loss(const Matrix<Real>& logprobs, const std::vector<TokenId>& targets,
                      Real eps_ls, TokenId pad_id = kPadId) {
  if (targets.size() != logprobs.rows())
    throw DataError("smoothed_ce_loss: target length mismatch");
  if (eps_ls < Real(0) || eps_ls >= Real(1))
    throw DataError("smoothed_ce_loss: eps_ls must be in [0, 1)");
  const std::size_t vsize = logprobs.cols();
  const Real uniform = eps_ls / static_cast<Real>(vsize);
  const Real hot = Real(1) - eps_ls;
  Real total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logprobs.rows(); ++i) {
    if (targets[i] == pad_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= vsize)
      throw DataError("smoothed_ce_loss: target id out of range");
    const Real* r = logprobs.row(i).data();
    Real acc = 0;
    for (std::size_t j = 0; j < vsize; ++j) acc -= uniform * r[j];
    acc -= hot * r[static_cast<std::size_t>(targets[i])];
    total += acc;
    ++count;
  }
  if (count == 0) throw DataError("smoothed_ce_loss: all targets are <PAD>");
  return total / static_cast<Real>(count);
}

// ---------------------------------------------------------------- schedule

// Noam schedule: lr_scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).
inline double lr_at(std::int64_t step, std::int64_t warmup_steps, int d_model,
                    double lr_scale) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  if (warmup_steps < 1) throw std::invalid_argument("lr_at: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup_steps);
  return lr_scale * std::pow(static_cast<double>(d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

// -------------------------------------------------------------------- adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

template <typename Real>
struct AdamState {
  NamedTensors<Real> m;  // first moments
  NamedTensors<Real> v;  // second moments
  std::uint64_t t = 0;

  static AdamState zeros_like(const NamedTensors<Real>& params) {
    AdamState s;
    for (const auto& [name, tensor] : params) {
      s.m.emplace(name, Matrix<Real>(tensor.rows(), tensor.cols()));
      s.v.emplace(name, Matrix<Real>(tensor.rows(), tensor.cols()));
    }
    return s;
  }
};

// Standard bias-corrected Adam update, in place. Parameter and gradient
// keysets must match exactly.
template <typename Real>
void adam_step(NamedTensors<Real>& params, const NamedTensors<Real>& grads,
               AdamState<Real>& state, double lr, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size())
    throw DataError("adam_step: parameter/gradient keyset mismatch (" +
                    std::to_string(params.size()) + " vs " +
                    std::to_string(grads.size()) + " tensors)");
  state.t += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw DataError("adam_step: missing gradient for " + name);
    const auto& g = git->second;
    if (!g.same_shape(p)) throw DataError("adam_step: gradient shape mismatch for " + name);
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g.data()[i]);
      const double mi = b1 * static_cast<double>(m.data()[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v.data()[i]) + (1.0 - b2) * gi * gi;
      m.data()[i] = static_cast<Real>(mi);
      v.data()[i] = static_cast<Real>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data()[i] = static_cast<Real>(static_cast<double>(p.data()[i]) -
                                      lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ------------------------------------------------------------- checkpoints

template <typename Real>
std::uint64_t params_fingerprint(const NamedTensors<Real>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ (sizeof(Real) * 0x9e37ULL);
  for (const auto& [name, tensor] : params) {  // std::map: sorted by name
    h = mix_u64(h ^ fnv1a(name));
    h = mix_u64(h ^ tensor.rows());
    h = mix_u64(h ^ tensor.cols());
  }
  return h;
}

template <typename Real>
struct Checkpoint {
  NamedTensors<Real> params;
  std::optional<AdamState<Real>> optimizer;
  std::uint64_t step = 0;
  std::uint64_t fingerprint = 0;
  std::string stage;
};

namespace detail {

template <typename Real>
void put_tensor_table(std::string& out, const NamedTensors<Real>& table) {
  put_u32(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, tensor] : table) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
    put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
    const std::size_t n = tensor.size();
    const std::size_t base = out.size();
    out.resize(base + n * sizeof(Real));
    std::memcpy(out.data() + base, tensor.data(), n * sizeof(Real));
  }
}

template <typename Real>
NamedTensors<Real> read_tensor_table(ByteReader& r) {
  NamedTensors<Real> table;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u32());
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Matrix<Real> t(rows, cols);
    r.raw(t.data(), static_cast<std::size_t>(rows) * cols * sizeof(Real));
    table.emplace(std::move(name), std::move(t));
  }
  return table;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Real>
std::string encode_checkpoint(const Checkpoint<Real>& ckpt) {
  std::string out;
  out += "MSKC";
  put_u32(out, kCheckpointVersion);
  put_u64(out, ckpt.fingerprint);
  put_u32(out, sizeof(Real));
  put_u64(out, ckpt.step);
  put_u32(out, static_cast<std::uint32_t>(ckpt.stage.size()));
  out += ckpt.stage;
  detail::put_tensor_table(out, ckpt.params);
  out.push_back(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    put_u64(out, ckpt.optimizer->t);
    detail::put_tensor_table(out, ckpt.optimizer->m);
    detail::put_tensor_table(out, ckpt.optimizer->v);
  }
  return out;
}

template <typename Real>
Checkpoint<Real> decode_checkpoint(const std::string& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.str(4) != "MSKC") throw DataError(what + ": bad magic, not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint<Real> ckpt;
  ckpt.fingerprint = r.u64();
  const std::uint32_t dtype = r.u32();
  if (dtype != sizeof(Real))
    throw DataError(what + ": checkpoint stores " + std::to_string(dtype * 8) +
                    "-bit values but this build expects " +
                    std::to_string(sizeof(Real) * 8) + "-bit");
  ckpt.step = r.u64();
  ckpt.stage = r.str(r.u32());
  ckpt.params = detail::read_tensor_table<Real>(r);
  const bool has_opt = r.str(1)[0] != 0;
  if (has_opt) {
    AdamState<Real> st;
    st.t = r.u64();
    st.m = detail::read_tensor_table<Real>(r);
    st.v = detail::read_tensor_table<Real>(r);
    ckpt.optimizer = std::move(st);
  }
  return ckpt;
}

template <typename Real>
void write_checkpoint(const std::string& path, const Checkpoint<Real>& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

template <typename Real>
Checkpoint<Real> read_checkpoint(const std::string& path) {
  return decode_checkpoint<Real>(read_file_bytes(path), path);
}

// Elementwise arithmetic mean of checkpoint parameters; optimizer state is
// ignored. All checkpoints must share one fingerprint.
template <typename Real>
NamedTensors<Real> average_checkpoints(const std::vector<Checkpoint<Real>>& ckpts) {
  if (ckpts.empty()) throw DataError("average_checkpoints: no checkpoints");
  for (const auto& c : ckpts)
    if (c.fingerprint != ckpts.front().fingerprint)
      throw DataError("average_checkpoints: fingerprint mismatch (step " +
                      std::to_string(c.step) + " vs step " +
                      std::to_string(ckpts.front().step) + ")");
  NamedTensors<Real> out;
  const double inv_n = 1.0 / static_cast<double>(ckpts.size());
  for (const auto& [name, first] : ckpts.front().params) {
    Matrix<double> acc(first.rows(), first.cols());
    for (const auto& c : ckpts) {
      const auto& t = c.params.at(name);
      if (!t.same_shape(first))
        throw DataError("average_checkpoints: shape mismatch for " + name);
      for (std::size_t i = 0; i < t.size(); ++i)
        acc.data()[i] += static_cast<double>(t.data()[i]);
    }
    Matrix<Real> mean(first.rows(), first.cols());
    for (std::size_t i = 0; i < acc.size(); ++i)
      mean.data()[i] = static_cast<Real>(acc.data()[i] * inv_n);
    out.emplace(name, std::move(mean));
  }
  return out;
}

// Overwrites matching keys of `base` with `overrides`; every override key
// must exist in base with an identical shape. Mismatches are reported by
// tensor name.
template <typename Real>
NamedTensors<Real> merge_params(NamedTensors<Real> base,
                                const NamedTensors<Real>& overrides) {
  std::vector<std::string> bad;
  for (const auto& [name, tensor] : overrides) {
    auto it = base.find(name);
    if (it == base.end()) {
      bad.push_back(name + " (absent in target model)");
    } else if (!it->second.same_shape(tensor)) {
      bad.push_back(name + " (init " + std::to_string(tensor.rows()) + "x" +
                    std::to_string(tensor.cols()) + ", model " +
                    std::to_string(it->second.rows()) + "x" +
                    std::to_string(it->second.cols()) + ")");
    } else {
      it->second = tensor;
    }
  }
  if (!bad.empty()) {
    std::string msg = "incompatible init parameters:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw DataError(msg);
  }
  return base;
}

// ------------------------------------------------------------ stage runner

enum class TrainStage { kAcoustic, kLinguistic, kPosttrain };

inline const char* to_string(TrainStage s) {
  switch (s) {
    case TrainStage::kAcoustic: return "acoustic";
    case TrainStage::kLinguistic: return "linguistic";
    case TrainStage::kPosttrain: return "posttrain";
  }
  return "?";
}

inline TrainStage parse_stage(const std::string& s) {
  if (s == "acoustic") return TrainStage::kAcoustic;
  if (s == "linguistic") return TrainStage::kLinguistic;
  if (s == "posttrain") return TrainStage::kPosttrain;
  throw DataError("unknown stage '" + s + "' (expected acoustic|linguistic|posttrain)");
}

struct TrainConfig {
  TrainStage stage = TrainStage::kAcoustic;
  int batch_size = 16;
  std::int64_t max_steps = 1000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-9;
  std::int64_t warmup_steps = 400;
  double lr_scale = 1.0;
  double label_smoothing = 0.1;
  MaskConfig mask_cfg;  // acoustic stage only
  int avg_last_n = 20;
  std::uint64_t seed = 1;
  // cadence / plumbing
  std::int64_t log_every = 10;
  std::int64_t ckpt_every = 100;
  std::int64_t frame_budget = 100000;  // max summed frames per batch
  std::string val_manifest;            // optional validation manifest path
};

inline TrainConfig train_config_from_kv(const KeyValueConfig& kv) {
  TrainConfig c;
  c.stage = parse_stage(kv.get_string("stage", "acoustic"));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.max_steps = kv.get_int("max_steps", c.max_steps);
  c.adam_beta1 = kv.get_real("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_real("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_real("adam_eps", c.adam_eps);
  c.warmup_steps = kv.get_int("warmup_steps", c.warmup_steps);
  c.lr_scale = kv.get_real("lr_scale", c.lr_scale);
  c.label_smoothing = kv.get_real("label_smoothing", c.label_smoothing);
  c.mask_cfg.num_chunks = static_cast<int>(kv.get_int("mask_k", c.mask_cfg.num_chunks));
  c.mask_cfg.max_half_width =
      static_cast<int>(kv.get_int("mask_w", c.mask_cfg.max_half_width));
  c.mask_cfg.zero_prob = kv.get_real("mask_zero_prob", c.mask_cfg.zero_prob);
  c.avg_last_n = static_cast<int>(kv.get_int("avg_last_n", c.avg_last_n));
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.log_every = kv.get_int("log_every", c.log_every);
  c.ckpt_every = kv.get_int("ckpt_every", c.ckpt_every);
  c.frame_budget = kv.get_int("frame_budget", c.frame_budget);
  c.val_manifest = kv.get_string("val_manifest", c.val_manifest);
  return c;
}

inline ModelConfig model_config_from_kv(const KeyValueConfig& kv, const ModelConfig& base = {}) {
  ModelConfig c = base;
  c.enc_layers = static_cast<int>(kv.get_int("enc_layers", c.enc_layers));
  c.dec_layers = static_cast<int>(kv.get_int("dec_layers", c.dec_layers));
  c.d_model = static_cast<int>(kv.get_int("d_model", c.d_model));
  c.heads = static_cast<int>(kv.get_int("heads", c.heads));
  c.d_ff = static_cast<int>(kv.get_int("d_ff", c.d_ff));
  c.input_dim = static_cast<int>(kv.get_int("input_dim", c.input_dim));
  c.vocab_size = static_cast<int>(kv.get_int("vocab_size", c.vocab_size));
  c.dropout = kv.get_real("dropout", c.dropout);
  c.use_pos_enc = kv.get_bool("use_pos_enc", c.use_pos_enc);
  return c;
}

struct LossLogEntry {
  std::int64_t step = 0;
  std::string stage;
  double lr = 0.0;
  double loss = 0.0;
};

inline std::string format_loss_line(const LossLogEntry& e) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld\t%s\t%.10e\t%.10e",
                static_cast<long long>(e.step), e.stage.c_str(), e.lr, e.loss);
  return buf;
}

// In-memory training utterance.
struct TrainUtterance {
  std::string id;
  Matrix<float> features;
  std::vector<TokenId> tokens;  // transcript ids, empty in the acoustic stage
};

template <typename Real>
struct StageResult {
  NamedTensors<Real> final_params;
  NamedTensors<Real> averaged_params;  // mean of the last avg_last_n checkpoints
  std::vector<LossLogEntry> loss_log;
  std::vector<LossLogEntry> val_log;
  double final_val_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t fingerprint = 0;
};

// Runs one training stage over in-memory data. The caller prepares the
// initial parameters (merged M0, averaged-M1 + reinit_softmax, or fresh);
// the runner owns batching, masking, the optimizer, checkpoints and logs.
template <typename Real>
class StageRunner {
 public:
  StageRunner(TrainConfig tcfg, ModelConfig mcfg) : tcfg_(tcfg), mcfg_(mcfg) {
    if (tcfg_.max_steps < 1) throw DataError("train: max_steps must be >= 1");
    if (tcfg_.batch_size < 1) throw DataError("train: batch_size must be >= 1");
    const bool acoustic = tcfg_.stage == TrainStage::kAcoustic;
    params_ = init_params<Real>(mcfg_, tcfg_.seed, /*with_head=*/acoustic,
                                /*with_decoder=*/!acoustic);
  }

  // Replaces the fresh initialization with caller-provided tensors.
  void set_init_params(const NamedTensors<Real>& init) {
    params_ = merge_params(std::move(params_), init);
  }

  // Full replacement (post-training from an averaged model with a resized
  // softmax goes through here after reinit_softmax).
  void set_params(NamedTensors<Real> params) { params_ = std::move(params); }

  void set_data(std::vector<TrainUtterance> data) {
    data_ = std::move(data);
    validate_data(data_, /*supervised=*/tcfg_.stage != TrainStage::kAcoustic);
  }

  void set_validation_data(std::vector<TrainUtterance> data) {
    val_data_ = std::move(data);
    validate_data(val_data_, /*supervised=*/true);
  }

  // Directory for checkpoints/ and logs/; optional.
  void set_output_dir(const std::string& dir) { out_dir_ = dir; }

  void set_mask_dump_path(const std::string& path) { mask_dump_path_ = path; }

  const NamedTensors<Real>& params() const { return params_; }

  StageResult<Real> run() {
    if (data_.empty()) throw DataError("train: no training data");
    const bool acoustic = tcfg_.stage == TrainStage::kAcoustic;
    Transformer<Real> model(mcfg_, params_);
    AdamState<Real> adam = AdamState<Real>::zeros_like(model.params());
    AdamConfig adam_cfg{tcfg_.adam_beta1, tcfg_.adam_beta2, tcfg_.adam_eps};
    const std::uint64_t fingerprint = params_fingerprint(model.params());

    std::ofstream loss_file, val_file, mask_file;
    if (!out_dir_.empty()) {
      namespace fs = std::filesystem;
      fs::create_directories(fs::path(out_dir_) / "checkpoints");
      fs::create_directories(fs::path(out_dir_) / "logs");
      loss_file.open((fs::path(out_dir_) / "logs" / "loss.log").string(), std::ios::trunc);
      if (!val_data_.empty())
        val_file.open((fs::path(out_dir_) / "logs" / "val.log").string(), std::ios::trunc);
    }
    if (!mask_dump_path_.empty()) mask_file.open(mask_dump_path_, std::ios::trunc);

    StageResult<Real> result;
    result.fingerprint = fingerprint;
    std::deque<Checkpoint<Real>> window;

    Batcher batcher(data_.size(), tcfg_.batch_size, tcfg_.frame_budget, tcfg_.seed,
                    [this](std::size_t i) { return data_[i].features.rows(); });

    for (std::int64_t step = 1; step <= tcfg_.max_steps; ++step) {
      const auto batch = batcher.next();
      Tape<Real> tape;
      Rng dropout_rng(split_seed(tcfg_.seed, "dropout", static_cast<std::uint64_t>(step)));
      std::vector<typename Tape<Real>::Index> terms;
      std::size_t ce_positions = 0;
      for (const auto& [utt_index, epoch] : batch) {
        const TrainUtterance& utt = data_[utt_index];
        if (acoustic) {
          terms.push_back(acoustic_term(tape, model, utt, epoch, &dropout_rng,
                                        mask_file.is_open() ? &mask_file : nullptr));
        } else {
          terms.push_back(ce_term(tape, model, utt, &dropout_rng));
          ce_positions += utt.tokens.size() + 1;  // targets + </S>
        }
      }
      const Real norm =
          acoustic ? Real(1) / (static_cast<Real>(batch.size()) *
                                static_cast<Real>(tcfg_.mask_cfg.num_chunks))
                   : Real(1) / static_cast<Real>(ce_positions);
      const auto loss_node = tape.scale(tape.sum_scalars(terms), norm);
      const double loss = static_cast<double>(tape.value(loss_node)(0, 0));
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at step " + std::to_string(step) +
                           " (stage " + to_string(tcfg_.stage) + ")");
      tape.backward(loss_node);
      NamedTensors<Real> grads;
      tape.accumulate_param_grads(grads);

      const double lr = lr_at(step, tcfg_.warmup_steps, mcfg_.d_model, tcfg_.lr_scale);
      adam_step(model.mutable_params(), grads, adam, lr, adam_cfg);

      if (step % tcfg_.log_every == 0) {
        LossLogEntry e{step, to_string(tcfg_.stage), lr, loss};
        result.loss_log.push_back(e);
        if (loss_file.is_open()) loss_file << format_loss_line(e) << '\n';
        if (!val_data_.empty()) {
          const double vl = validation_loss(model);
          LossLogEntry ve{step, to_string(tcfg_.stage), lr, vl};
          result.val_log.push_back(ve);
          if (val_file.is_open()) val_file << format_loss_line(ve) << '\n';
        }
      }
      if (step % tcfg_.ckpt_every == 0 || step == tcfg_.max_steps) {
        Checkpoint<Real> ckpt;
        ckpt.params = model.params();
        ckpt.optimizer = adam;
        ckpt.step = static_cast<std::uint64_t>(step);
        ckpt.fingerprint = fingerprint;
        ckpt.stage = to_string(tcfg_.stage);
        if (!out_dir_.empty()) {
          char name[64];
          std::snprintf(name, sizeof(name), "checkpoint_%08lld.mskc",
                        static_cast<long long>(step));
          namespace fs = std::filesystem;
          write_checkpoint((fs::path(out_dir_) / "checkpoints" / name).string(), ckpt);
        }
        ckpt.optimizer.reset();  // the averaging window only needs params
        window.push_back(std::move(ckpt));
        while (window.size() > static_cast<std::size_t>(tcfg_.avg_last_n))
          window.pop_front();
      }
    }

    result.final_params = model.params();
    result.averaged_params =
        average_checkpoints(std::vector<Checkpoint<Real>>(window.begin(), window.end()));
    if (!val_data_.empty()) {
      Transformer<Real> final_model(mcfg_, result.final_params);
      result.final_val_loss = validation_loss(final_model);
    }
    params_ = result.final_params;
    return result;
  }

  // Teacher-forced smoothed-CE loss over the validation set, no dropout.
  double validation_loss(const Transformer<Real>& model) const {
    double total = 0.0;
    std::size_t positions = 0;
    for (const auto& utt : val_data_) {
      Tape<Real> tape;
      Matrix<Real> x = utt.features.template cast<Real>();
      auto h = model.build_encoder(tape, x);
      std::vector<TokenId> input{kBosId};
      input.insert(input.end(), utt.tokens.begin(), utt.tokens.end());
      std::vector<TokenId> targets(utt.tokens);
      targets.push_back(kEosId);
      auto lp = model.build_decoder_logprobs(tape, h, input);
      auto term = tape.smoothed_ce_sum(lp, targets,
                                       static_cast<Real>(tcfg_.label_smoothing));
      total += static_cast<double>(tape.value(term)(0, 0));
      positions += targets.size();
    }
    if (positions == 0) throw DataError("validation: no target positions");
    return total / static_cast<double>(positions);
  }

 private:
  // Deterministic epoch shuffling + packing by utterance count and summed
  // frame count. Returns (utterance index, epoch) pairs.
  class Batcher {
   public:
    Batcher(std::size_t n, int batch_size, std::int64_t frame_budget,
            std::uint64_t seed, std::function<std::size_t(std::size_t)> frames_of)
        : n_(n), batch_size_(batch_size), frame_budget_(frame_budget),
          seed_(seed), frames_of_(std::move(frames_of)) {
      reshuffle();
    }

    std::vector<std::pair<std::size_t, std::uint64_t>> next() {
      std::vector<std::pair<std::size_t, std::uint64_t>> batch;
      std::size_t frames = 0;
      while (batch.size() < static_cast<std::size_t>(batch_size_)) {
        if (cursor_ == n_) {
          ++epoch_;
          reshuffle();
        }
        const std::size_t idx = order_[cursor_];
        const std::size_t f = frames_of_(idx);
        if (!batch.empty() &&
            frames + f > static_cast<std::size_t>(frame_budget_))
          break;
        batch.emplace_back(idx, epoch_);
        frames += f;
        ++cursor_;
      }
      return batch;
    }

   private:
    void reshuffle() {
      order_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
      Rng rng(split_seed(seed_, "batch_order", epoch_));
      for (std::size_t i = n_; i > 1; --i)
        std::swap(order_[i - 1], order_[rng.next_below(i)]);
      cursor_ = 0;
    }

    std::size_t n_;
    int batch_size_;
    std::int64_t frame_budget_;
    std::uint64_t seed_;
    std::function<std::size_t(std::size_t)> frames_of_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
  };

  typename Tape<Real>::Index acoustic_term(Tape<Real>& tape, const Transformer<Real>& model,
                                           const TrainUtterance& utt, std::uint64_t epoch,
                                           Rng* dropout_rng, std::ofstream* mask_file) {
    const MaskPlan plan = sample_plan(utt.features.rows(), tcfg_.mask_cfg,
                                      split_seed(tcfg_.seed, utt.id, epoch));
    if (mask_file) (*mask_file) << format_plan(utt.id, plan) << '\n';
    FeatureMatrix masked_f;
    masked_f.frames = utt.features;
    masked_f = apply_plan(masked_f, plan);
    Matrix<Real> masked = masked_f.frames.template cast<Real>();
    Matrix<Real> target = utt.features.template cast<Real>();
    if (!masked.all_finite())
      throw DataError("encode: non-finite input features in utterance '" + utt.id + "'");
    auto h = model.build_encoder(tape, masked, nullptr, /*train=*/true, dropout_rng);
    auto xhat = model.build_reconstruction(tape, h);
    return tape.weighted_sq_error(xhat, std::move(target), chunk_multiplicity<Real>(plan));
  }

  typename Tape<Real>::Index ce_term(Tape<Real>& tape, const Transformer<Real>& model,
                                     const TrainUtterance& utt, Rng* dropout_rng) {
    Matrix<Real> x = utt.features.template cast<Real>();
    if (!x.all_finite())
      throw DataError("encode: non-finite input features in utterance '" + utt.id + "'");
    auto h = model.build_encoder(tape, x, nullptr, /*train=*/true, dropout_rng);
    std::vector<TokenId> input{kBosId};
    input.insert(input.end(), utt.tokens.begin(), utt.tokens.end());
    std::vector<TokenId> targets(utt.tokens);
    targets.push_back(kEosId);
    auto lp = model.build_decoder_logprobs(tape, h, input, nullptr, /*train=*/true,
                                           dropout_rng);
    return tape.smoothed_ce_sum(lp, targets, static_cast<Real>(tcfg_.label_smoothing));
  }

  static void validate_data(const std::vector<TrainUtterance>& data, bool supervised) {
    for (const auto& utt : data) {
      if (utt.features.rows() == 0)
        throw DataError("train: utterance '" + utt.id + "' has no frames");
      if (supervised && utt.tokens.empty())
        throw DataError("train: utterance '" + utt.id +
                        "' has no transcript in a supervised stage");
    }
  }

  TrainConfig tcfg_;
  ModelConfig mcfg_;
  NamedTensors<Real> params_;
  std::vector<TrainUtterance> data_;
  std::vector<TrainUtterance> val_data_;
  std::string out_dir_;
  std::string mask_dump_path_;
};

// Loads manifest records into memory, reading feature files and encoding
// transcripts (empty transcript -> empty token list). The acoustic stage
// passes keep_transcripts = false and uses only the speech side.
template <typename Real = float>
std::vector<TrainUtterance> load_train_data(const Manifest& manifest,
                                            const Vocab* vocab,
                                            bool keep_transcripts = true) {
  std::vector<TrainUtterance> data;
  data.reserve(manifest.size());
  for (const auto& rec : manifest.records) {
    if (rec.source_kind != SourceKind::kFeat)
      throw DataError("train: utterance '" + rec.id +
                      "' is not a feature source; run featurize first");
    TrainUtterance utt;
    utt.id = rec.id;
    utt.features = read_feature_file(rec.source_path).frames;
    if (keep_transcripts && !rec.transcript.empty()) {
      if (!vocab) throw DataError("train: transcripts present but no vocab given");
      utt.tokens = vocab->encode(rec.transcript);
    }
    data.push_back(std::move(utt));
  }
  return data;
}

}  // namespace mskseq

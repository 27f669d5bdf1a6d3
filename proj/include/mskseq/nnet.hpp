// mskseq/nnet.hpp
//
// Transformer encoder-decoder with an optional acoustic projection head.
// Post-norm blocks, sinusoidal positional encodings on both the projected
// feature inputs and the token embeddings, ReLU feed-forward layers.
// The softmax projection is tied to the token embedding ("dec.embed");
// the only other vocab-shaped tensor is the softmax bias ("out.bias"),
// so re-initializing the softmax layer touches exactly those two names.
//
// Parameter tensors are stored in a name -> matrix map. Name scheme:
//   enc.input_proj.{W,b}
//   enc.L<i>.attn.{Wq,bq,Wk,bk,Wv,bv,Wo,bo}
//   enc.L<i>.{ln1,ln2}.{g,b}
//   enc.L<i>.ffn.{W1,b1,W2,b2}
//   dec.embed                      (vocab x d_model, tied softmax weight)
//   dec.L<i>.{self,cross}.{Wq,...} dec.L<i>.{ln1,ln2,ln3}.{g,b}
//   dec.L<i>.ffn.{W1,b1,W2,b2}
//   out.bias                       (1 x vocab)
//   head.{W,b}                     (acoustic-pretraining mode only)
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mskseq/autodiff.hpp"
#include "mskseq/errors.hpp"
#include "mskseq/matrix.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

struct ModelConfig {
  int enc_layers = 6;
  int dec_layers = 6;
  int d_model = 512;
  int heads = 16;
  int d_ff = 2048;
  int vocab_size = 0;
  int input_dim = 320;
  double dropout = 0.1;
  bool use_pos_enc = true;

  void validate() const {
    if (enc_layers < 1 || dec_layers < 1 || d_model < 1 || heads < 1 ||
        d_ff < 1 || vocab_size < 1 || input_dim < 1)
      throw DataError("model config: all dimensions must be >= 1");
    if (d_model % heads != 0)
      throw DataError("model config: d_model must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw DataError("model config: dropout must be in [0, 1)");
  }
};

template <typename Real>
using NamedTensors = std::map<std::string, Matrix<Real>>;

inline bool is_encoder_key(const std::string& name) {
  return name.rfind("enc.", 0) == 0;
}

inline bool is_head_key(const std::string& name) {
  return name.rfind("head.", 0) == 0;
}

inline bool is_softmax_key(const std::string& name) {
  return name == "dec.embed" || name == "out.bias";
}

// Expected tensor shapes for a config. The parameter count implied here is
//   enc: input_dim*d + d + Ne * (4(d^2+d) + 4d + 2*d*ff + ff + d)
//   dec: V*d + Nd * (8(d^2+d) + 6d + 2*d*ff + ff + d) + V
//   head (optional): d*input_dim + input_dim
// The acoustic-pretraining model is encoder + head only (with_decoder =
// false); full seq2seq models carry the decoder and no head.
inline std::map<std::string, std::pair<std::size_t, std::size_t>> expected_shapes(
    const ModelConfig& cfg, bool with_head, bool with_decoder = true) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  const auto in = static_cast<std::size_t>(cfg.input_dim);
  std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;
  shapes["enc.input_proj.W"] = {in, d};
  shapes["enc.input_proj.b"] = {1, d};
  auto attn_block = [&](const std::string& prefix) {
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) shapes[prefix + "." + w] = {d, d};
    for (const char* b : {"bq", "bk", "bv", "bo"}) shapes[prefix + "." + b] = {1, d};
  };
  auto ln_block = [&](const std::string& prefix) {
    shapes[prefix + ".g"] = {1, d};
    shapes[prefix + ".b"] = {1, d};
  };
  auto ffn_block = [&](const std::string& prefix) {
    shapes[prefix + ".W1"] = {d, ff};
    shapes[prefix + ".b1"] = {1, ff};
    shapes[prefix + ".W2"] = {ff, d};
    shapes[prefix + ".b2"] = {1, d};
  };
  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string base = "enc.L" + std::to_string(i);
    attn_block(base + ".attn");
    ln_block(base + ".ln1");
    ffn_block(base + ".ffn");
    ln_block(base + ".ln2");
  }
  if (with_decoder) {
    shapes["dec.embed"] = {v, d};
    for (int i = 0; i < cfg.dec_layers; ++i) {
      const std::string base = "dec.L" + std::to_string(i);
      attn_block(base + ".self");
      ln_block(base + ".ln1");
      attn_block(base + ".cross");
      ln_block(base + ".ln2");
      ffn_block(base + ".ffn");
      ln_block(base + ".ln3");
    }
    shapes["out.bias"] = {1, v};
  }
  if (with_head) {
    shapes["head.W"] = {d, in};
    shapes["head.b"] = {1, in};
  }
  return shapes;
}

inline std::size_t parameter_count(const ModelConfig& cfg, bool with_head,
                                   bool with_decoder = true) {
  std::size_t total = 0;
  for (const auto& [name, shape] : expected_shapes(cfg, with_head, with_decoder))
    total += shape.first * shape.second;
  return total;
}

// Glorot-style scaled-uniform init, U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
// Each tensor draws from its own stream seeded by (seed, tensor name), so
// initialization is independent of map iteration order and individual
// tensors can be re-drawn without disturbing the rest.
template <typename Real>
NamedTensors<Real> init_params(const ModelConfig& cfg, std::uint64_t seed,
                               bool with_head, bool with_decoder = true) {
  cfg.validate();
  NamedTensors<Real> params;
  for (const auto& [name, shape] : expected_shapes(cfg, with_head, with_decoder)) {
    Matrix<Real> t(shape.first, shape.second);
    const bool is_ln_gain = name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
                            name.find(".ln") != std::string::npos;
    const bool is_bias = !is_ln_gain && (shape.first == 1);
    if (is_ln_gain) {
      t.fill(Real(1));
    } else if (is_bias) {
      // zero
    } else {
      Rng rng(split_seed(seed, name));
      const double a = std::sqrt(6.0 / static_cast<double>(shape.first + shape.second));
      for (auto& v : t.raw())
        v = static_cast<Real>((2.0 * rng.next_unit() - 1.0) * a);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

// Replaces only the softmax layer (tied output embedding + softmax bias),
// resized to new_vocab_size. Every other tensor is carried over untouched.
template <typename Real>
NamedTensors<Real> reinit_softmax(const NamedTensors<Real>& params,
                                  int new_vocab_size, int d_model,
                                  std::uint64_t seed) {
  if (new_vocab_size < 1)
    throw DataError("reinit_softmax: vocab size must be >= 1");
  NamedTensors<Real> out;
  for (const auto& [name, tensor] : params)
    if (!is_softmax_key(name)) out.emplace(name, tensor);
  const auto v = static_cast<std::size_t>(new_vocab_size);
  const auto d = static_cast<std::size_t>(d_model);
  Matrix<Real> embed(v, d);
  Rng rng(split_seed(seed, "dec.embed"));
  const double a = std::sqrt(6.0 / static_cast<double>(v + d));
  for (auto& x : embed.raw())
    x = static_cast<Real>((2.0 * rng.next_unit() - 1.0) * a);
  out.emplace("dec.embed", std::move(embed));
  out.emplace("out.bias", Matrix<Real>(1, v));
  return out;
}

// Encoder-only subset (M0): drops the projection head and everything
// outside the encoder stack.
template <typename Real>
NamedTensors<Real> encoder_subset(const NamedTensors<Real>& params) {
  NamedTensors<Real> out;
  for (const auto& [name, tensor] : params)
    if (is_encoder_key(name)) out.emplace(name, tensor);
  return out;
}

// Sinusoidal positional encoding, rows = positions.
template <typename Real>
Matrix<Real> positional_encoding(std::size_t length, int d_model) {
  Matrix<Real> pe(length, static_cast<std::size_t>(d_model));
  for (std::size_t pos = 0; pos < length; ++pos)
    for (int j = 0; j < d_model; ++j) {
      const int pair = j / 2;
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * pair / static_cast<double>(d_model));
      pe(pos, static_cast<std::size_t>(j)) =
          static_cast<Real>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

// Transformer forward graphs over a Tape, plus convenience inference entry
// points that run a throwaway tape. One instance owns a parameter map and
// never mutates it; training code replaces the map between steps.
template <typename Real>
class Transformer {
 public:
  using Index = typename Tape<Real>::Index;

  Transformer(ModelConfig cfg, NamedTensors<Real> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    validate_shapes();
  }

  const ModelConfig& config() const { return cfg_; }
  const NamedTensors<Real>& params() const { return params_; }
  NamedTensors<Real>& mutable_params() { return params_; }

  bool has_head() const { return params_.count("head.W") > 0; }
  bool has_decoder() const { return params_.count("dec.embed") > 0; }

  // Restricts which parameters report gradients (nullptr = all trainable).
  void set_trainable_filter(std::function<bool(const std::string&)> filter) {
    trainable_filter_ = std::move(filter);
  }

  // ------------------------------------------------------- graph builders

  // Encoder stack over features x (T x input_dim). pad, when given, marks
  // frames to exclude from attention (nonzero = padded).
  Index build_encoder(Tape<Real>& tape, const Matrix<Real>& x,
                      const std::vector<char>* pad = nullptr, bool train = false,
                      Rng* dropout_rng = nullptr) const {
    if (x.cols() != static_cast<std::size_t>(cfg_.input_dim))
      throw DataError("encode: input dim " + std::to_string(x.cols()) +
                      " != configured " + std::to_string(cfg_.input_dim));
    if (pad && pad->size() != x.rows())
      throw DataError("encode: pad mask length mismatch");
    Index h = tape.matmul(tape.constant(x), leaf(tape, "enc.input_proj.W"));
    h = tape.add_row(h, leaf(tape, "enc.input_proj.b"));
    if (cfg_.use_pos_enc)
      h = tape.add_constant(h, positional_encoding<Real>(x.rows(), cfg_.d_model));
    h = maybe_dropout(tape, h, train, dropout_rng);
    const AttnMask mask = AttnMask::key_padding(pad);
    for (int i = 0; i < cfg_.enc_layers; ++i) {
      const std::string base = "enc.L" + std::to_string(i);
      h = attention_sublayer(tape, base + ".attn", base + ".ln1", h, h, mask, train,
                             dropout_rng);
      h = ffn_sublayer(tape, base + ".ffn", base + ".ln2", h, train, dropout_rng);
    }
    return h;
  }

  // Projection head: hidden states back to feature space.
  Index build_reconstruction(Tape<Real>& tape, Index h) const {
    if (!has_head())
      throw std::logic_error(
          "reconstruct: projection head absent (model is not in acoustic-pretraining mode)");
    Index y = tape.matmul(h, leaf(tape, "head.W"));
    return tape.add_row(y, leaf(tape, "head.b"));
  }

  // Decoder stack + tied softmax; returns per-position log-probabilities
  // (len(input_ids) x vocab). input_ids is the teacher-forced input,
  // i.e. <S> followed by the target prefix.
  Index build_decoder_logprobs(Tape<Real>& tape, Index h_enc,
                               const std::vector<TokenId>& input_ids,
                               const std::vector<char>* enc_pad = nullptr,
                               bool train = false, Rng* dropout_rng = nullptr) const {
    if (!has_decoder())
      throw std::logic_error("decode: model has no decoder (acoustic-pretraining mode)");
    if (input_ids.empty()) throw DataError("decode: empty decoder input");
    for (TokenId id : input_ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw DataError("decode: token id " + std::to_string(id) +
                        " >= vocab_size " + std::to_string(cfg_.vocab_size));
    Index e = tape.embed(leaf(tape, "dec.embed"), input_ids);
    e = tape.scale(e, static_cast<Real>(std::sqrt(static_cast<double>(cfg_.d_model))));
    if (cfg_.use_pos_enc)
      e = tape.add_constant(e,
                            positional_encoding<Real>(input_ids.size(), cfg_.d_model));
    e = maybe_dropout(tape, e, train, dropout_rng);
    const AttnMask cross_mask = AttnMask::key_padding(enc_pad);
    for (int i = 0; i < cfg_.dec_layers; ++i) {
      const std::string base = "dec.L" + std::to_string(i);
      e = attention_sublayer(tape, base + ".self", base + ".ln1", e, e,
                             AttnMask::causal_mask(), train, dropout_rng);
      e = attention_sublayer(tape, base + ".cross", base + ".ln2", e, h_enc,
                             cross_mask, train, dropout_rng);
      e = ffn_sublayer(tape, base + ".ffn", base + ".ln3", e, train, dropout_rng);
    }
    Index logits = tape.matmul_bt(e, leaf(tape, "dec.embed"));
    logits = tape.add_row(logits, leaf(tape, "out.bias"));
    return tape.log_softmax_rows(logits);
  }

  // ----------------------------------------------------------- inference

  Matrix<Real> encode(const Matrix<Real>& x, const std::vector<char>* pad = nullptr,
                      const std::string& utterance_id = "") const {
    if (!x.all_finite())
      throw DataError("encode: non-finite input features" +
                      (utterance_id.empty() ? std::string()
                                            : " in utterance '" + utterance_id + "'"));
    Tape<Real> tape;
    return tape.value(build_encoder(tape, x, pad));
  }

  Matrix<Real> reconstruct(const Matrix<Real>& h) const {
    Tape<Real> tape;
    return tape.value(build_reconstruction(tape, tape.constant(h)));
  }

  // Log-probability distribution over the next token given a prefix that
  // must start with <S>. h_enc is a precomputed encoder output.
  std::vector<Real> decode_step(const Matrix<Real>& h_enc,
                                const std::vector<TokenId>& prefix,
                                const std::vector<char>* enc_pad = nullptr) const {
    if (prefix.empty() || prefix.front() != kBosId)
      throw DataError("decode_step: prefix must begin with <S>");
    Tape<Real> tape;
    Index lp = build_decoder_logprobs(tape, tape.constant(h_enc), prefix, enc_pad);
    const Matrix<Real>& m = tape.value(lp);
    auto last = m.row(m.rows() - 1);
    return {last.begin(), last.end()};
  }

 private:
  Index leaf(Tape<Real>& tape, const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("missing parameter tensor: " + name);
    const bool trainable = !trainable_filter_ || trainable_filter_(name);
    return tape.param(name, it->second, trainable);
  }

  Index maybe_dropout(Tape<Real>& tape, Index x, bool train, Rng* rng) const {
    if (!train || cfg_.dropout <= 0.0) return x;
    if (!rng) throw std::logic_error("dropout requested without an RNG");
    return tape.dropout(x, static_cast<Real>(cfg_.dropout), *rng);
  }

  // Post-norm residual attention block: LN(x + Dropout(Attn(x, kv))).
  Index attention_sublayer(Tape<Real>& tape, const std::string& attn_prefix,
                           const std::string& ln_prefix, Index x, Index kv,
                           AttnMask mask, bool train, Rng* rng) const {
    Index q = tape.add_row(tape.matmul(x, leaf(tape, attn_prefix + ".Wq")),
                           leaf(tape, attn_prefix + ".bq"));
    Index k = tape.add_row(tape.matmul(kv, leaf(tape, attn_prefix + ".Wk")),
                           leaf(tape, attn_prefix + ".bk"));
    Index v = tape.add_row(tape.matmul(kv, leaf(tape, attn_prefix + ".Wv")),
                           leaf(tape, attn_prefix + ".bv"));
    Index attn = tape.attention(q, k, v, cfg_.heads, mask);
    Index o = tape.add_row(tape.matmul(attn, leaf(tape, attn_prefix + ".Wo")),
                           leaf(tape, attn_prefix + ".bo"));
    o = maybe_dropout(tape, o, train, rng);
    return tape.layernorm(tape.add(x, o), leaf(tape, ln_prefix + ".g"),
                          leaf(tape, ln_prefix + ".b"));
  }

  Index ffn_sublayer(Tape<Real>& tape, const std::string& ffn_prefix,
                     const std::string& ln_prefix, Index x, bool train,
                     Rng* rng) const {
    Index f = tape.add_row(tape.matmul(x, leaf(tape, ffn_prefix + ".W1")),
                           leaf(tape, ffn_prefix + ".b1"));
    f = tape.relu(f);
    f = tape.add_row(tape.matmul(f, leaf(tape, ffn_prefix + ".W2")),
                     leaf(tape, ffn_prefix + ".b2"));
    f = maybe_dropout(tape, f, train, rng);
    return tape.layernorm(tape.add(x, f), leaf(tape, ln_prefix + ".g"),
                          leaf(tape, ln_prefix + ".b"));
  }

  void validate_shapes() const {
    const auto shapes = expected_shapes(cfg_, params_.count("head.W") > 0,
                                        params_.count("dec.embed") > 0);
    std::vector<std::string> mismatched;
    for (const auto& [name, shape] : shapes) {
      auto it = params_.find(name);
      if (it == params_.end()) {
        mismatched.push_back(name + " (missing)");
      } else if (it->second.rows() != shape.first ||
                 it->second.cols() != shape.second) {
        mismatched.push_back(name + " (got " + std::to_string(it->second.rows()) +
                             "x" + std::to_string(it->second.cols()) + ", want " +
                             std::to_string(shape.first) + "x" +
                             std::to_string(shape.second) + ")");
      }
    }
    for (const auto& [name, tensor] : params_)
      if (!shapes.count(name)) mismatched.push_back(name + " (unexpected)");
    if (!mismatched.empty()) {
      std::string msg = "parameter/config shape mismatch:";
      for (const auto& m : mismatched) msg += "\n  " + m;
      throw DataError(msg);
    }
  }

  ModelConfig cfg_;
  NamedTensors<Real> params_;
  std::function<bool(const std::string&)> trainable_filter_;
};

}  // namespace mskseq

// mskseq/synthvoice.hpp
//
// Deterministic text-to-feature synthesis. Every vocabulary token owns a
// fixed m x d feature template drawn once from a seeded codebook; an
// utterance is the concatenation of its tokens' templates plus i.i.d.
// Gaussian jitter. One constant set of templates plays the role of a
// single synthesis voice, so the acoustics are monotonous by construction
// while the transcripts carry the linguistic content.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/io.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

struct TokenTemplate {
  TokenId token_id = 0;
  Matrix<float> block;  // m x d
};

struct SynthConfig {
  int frames_per_token = 4;  // m
  int feature_dim = 8;       // d
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  float frame_rate = 100.0f / 3.0f;  // matches the stacked-frontend rate
};

// One template per vocab entry (specials included so ids line up; they are
// never synthesized). Standard-normal draws in token-id order.
inline std::vector<TokenTemplate> build_templates(const Vocab& vocab,
                                                  const SynthConfig& cfg) {
  if (vocab.size() == 0) throw DataError("build_templates: empty vocab");
  if (cfg.frames_per_token < 1)
    throw std::invalid_argument("build_templates: frames_per_token must be >= 1");
  if (cfg.feature_dim < 1)
    throw std::invalid_argument("build_templates: feature_dim must be >= 1");
  if (cfg.noise_std < 0.0)
    throw std::invalid_argument("build_templates: noise_std must be >= 0");
  Rng rng(mix_u64(cfg.seed ^ 0x73796e7468766f63ULL));
  std::vector<TokenTemplate> templates(vocab.size());
  for (std::size_t v = 0; v < vocab.size(); ++v) {
    templates[v].token_id = static_cast<TokenId>(v);
    templates[v].block = Matrix<float>(static_cast<std::size_t>(cfg.frames_per_token),
                                       static_cast<std::size_t>(cfg.feature_dim));
    for (auto& x : templates[v].block.raw())
      x = static_cast<float>(rng.next_normal());
  }
  return templates;
}

// Concatenates per-token templates and adds N(0, noise_std^2) jitter from
// the utterance seed. T = m * len(transcript).
inline FeatureMatrix synthesize(const std::vector<TokenId>& transcript,
                                const std::vector<TokenTemplate>& templates,
                                const SynthConfig& cfg,
                                std::uint64_t utterance_seed) {
  if (transcript.empty()) throw DataError("synthesize: empty transcript");
  for (TokenId id : transcript) {
    if (id < 0 || static_cast<std::size_t>(id) >= templates.size())
      throw DataError("synthesize: token id " + std::to_string(id) +
                      " has no template (vocab has " +
                      std::to_string(templates.size()) + " entries)");
    if (id == kUnkId)
      throw DataError("synthesize: transcript contains <UNK>; "
                      "the synthesis corpus must be fully covered by the vocab");
  }
  const auto m = static_cast<std::size_t>(cfg.frames_per_token);
  const auto d = static_cast<std::size_t>(cfg.feature_dim);
  FeatureMatrix out;
  out.frame_rate = cfg.frame_rate;
  out.frames = Matrix<float>(m * transcript.size(), d);
  Rng rng(utterance_seed);
  for (std::size_t p = 0; p < transcript.size(); ++p) {
    const Matrix<float>& block = templates[static_cast<std::size_t>(transcript[p])].block;
    for (std::size_t r = 0; r < m; ++r) {
      auto dst = out.frames.row(p * m + r);
      auto src = block.row(r);
      if (cfg.noise_std == 0.0) {
        for (std::size_t c = 0; c < d; ++c) dst[c] = src[c];
      } else {
        for (std::size_t c = 0; c < d; ++c)
          dst[c] = src[c] + static_cast<float>(cfg.noise_std * rng.next_normal());
      }
    }
  }
  return out;
}

}  // namespace mskseq

// mskseq/mask.hpp
//
// Masked-chunk sampling for acoustic pre-training. Per utterance, K chunk
// centers are drawn i.i.d. uniform over frame indices {0..T-1} and one
// half-width w is drawn uniform over {0..W}, shared by all K chunks.
// Chunk i covers the inclusive frame range
//   [max(0, c_i - w), min(c_i + w, T-1)].
// Each chunk is independently zeroed with probability zero_prob (default
// 0.8); with the remaining probability its frames stay visible but are
// still prediction targets. Chunks may overlap; overlapped frames count
// once per containing chunk in the loss.
//
// The draw order is fixed: K centers, then w, then K zero/keep decisions,
// all from one SplitMix64 stream, so a plan is a pure function of
// (seed, T, cfg).
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/io.hpp"
#include "mskseq/rng.hpp"

namespace mskseq {

struct MaskChunk {
  std::size_t center = 0;
  int half_width = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive
  bool zeroed = true;
};

struct MaskPlan {
  std::vector<MaskChunk> chunks;
  std::size_t num_frames = 0;
  std::uint64_t seed = 0;
};

struct MaskConfig {
  int num_chunks = 2;      // K
  int max_half_width = 10; // W
  double zero_prob = 0.8;
};

inline MaskPlan sample_plan(std::size_t num_frames, const MaskConfig& cfg,
                            std::uint64_t seed) {
  if (num_frames == 0) throw DataError("sample_plan: empty sequence (T = 0)");
  if (cfg.num_chunks < 1) throw std::invalid_argument("sample_plan: K must be >= 1");
  if (cfg.max_half_width < 0) throw std::invalid_argument("sample_plan: W must be >= 0");
  if (cfg.zero_prob < 0.0 || cfg.zero_prob > 1.0)
    throw std::invalid_argument("sample_plan: zero_prob must be in [0, 1]");

  Rng rng(seed);
  MaskPlan plan;
  plan.num_frames = num_frames;
  plan.seed = seed;
  plan.chunks.resize(static_cast<std::size_t>(cfg.num_chunks));
  for (auto& chunk : plan.chunks)
    chunk.center = rng.next_below(num_frames);
  const int w = static_cast<int>(
      rng.next_below(static_cast<std::uint64_t>(cfg.max_half_width) + 1));
  for (auto& chunk : plan.chunks) {
    chunk.half_width = w;
    chunk.start = chunk.center >= static_cast<std::size_t>(w)
                      ? chunk.center - static_cast<std::size_t>(w)
                      : 0;
    chunk.end = chunk.center + static_cast<std::size_t>(w) <= num_frames - 1
                    ? chunk.center + static_cast<std::size_t>(w)
                    : num_frames - 1;
    chunk.zeroed = rng.next_unit() < cfg.zero_prob;
  }
  return plan;
}

// Returns a copy with frames of zeroed chunks set to the zero vector.
// Frames of kept chunks and frames outside every chunk are untouched.
inline FeatureMatrix apply_plan(const FeatureMatrix& f, const MaskPlan& plan) {
  if (plan.num_frames != f.num_frames())
    throw DataError("apply_plan: plan covers " + std::to_string(plan.num_frames) +
                    " frames but features have " + std::to_string(f.num_frames()));
  FeatureMatrix out = f;
  for (const auto& chunk : plan.chunks) {
    if (!chunk.zeroed) continue;
    for (std::size_t t = chunk.start; t <= chunk.end; ++t) {
      auto row = out.frames.row(t);
      for (auto& v : row) v = 0.0f;
    }
  }
  return out;
}

// Inclusive per-chunk frame indices. A frame inside two chunks appears
// twice, once per chunk, matching the per-chunk sum in the training loss.
inline std::vector<std::pair<std::size_t, std::size_t>> masked_indices(
    const MaskPlan& plan) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < plan.chunks.size(); ++i)
    for (std::size_t t = plan.chunks[i].start; t <= plan.chunks[i].end; ++t)
      out.emplace_back(i, t);
  return out;
}

// One line per utterance for --dump-masks: id, w, per-chunk (start,end,zeroed).
inline std::string format_plan(const std::string& utterance_id, const MaskPlan& plan) {
  std::string line = utterance_id;
  line += '\t';
  line += std::to_string(plan.chunks.empty() ? 0 : plan.chunks.front().half_width);
  for (const auto& c : plan.chunks) {
    line += '\t';
    line += std::to_string(c.start) + "," + std::to_string(c.end) + "," +
            (c.zeroed ? "1" : "0");
  }
  return line;
}

}  // namespace mskseq

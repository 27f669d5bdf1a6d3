// mskseq/decode.hpp
//
// Beam-search decoding with GNMT length penalty lp(Y) = ((5+|Y|)/6)^alpha,
// where |Y| counts tokens after <S> (the closing </S> included). The search
// expands every live hypothesis, keeps the top beam_size expansions by
// running log-probability (ties broken by lexicographic token order),
// retires hypotheses ending in </S> to a pool capped at beam_size, and
// stops early once the best live hypothesis cannot beat the worst pooled
// score under any achievable length penalty. Final ranking is by
// length-penalized score, best first.
//
// If the length limit is reached with an empty pool, the best exhausted
// hypothesis is force-finished: </S> is appended (with its log-probability)
// and the hypothesis is flagged as forced.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/matrix.hpp"
#include "mskseq/nnet.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

struct BeamHypothesis {
  std::vector<TokenId> tokens;  // starts with <S>; finished ones end with </S>
  double logprob_sum = 0.0;
  bool finished = false;
  bool forced = false;
  double score = 0.0;  // logprob_sum / lp(length), set at retirement

  // Tokens between <S> and </S>.
  std::vector<TokenId> content() const {
    std::vector<TokenId> out;
    for (std::size_t i = 1; i < tokens.size(); ++i)
      if (tokens[i] != kEosId) out.push_back(tokens[i]);
    return out;
  }
};

struct DecodeConfig {
  int beam_size = 13;
  double alpha = 0.6;
  int max_len = 200;  // max tokens after <S>, </S> included
};

// Step scorer: log-probability distribution over the vocabulary for the
// next position given a prefix that starts with <S>.
using StepScorer = std::function<std::vector<double>(const std::vector<TokenId>&)>;

inline double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace detail {

inline bool better_by_sum(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.logprob_sum != b.logprob_sum) return a.logprob_sum > b.logprob_sum;
  return a.tokens < b.tokens;
}

inline bool better_by_score(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

}  // namespace detail

inline std::vector<BeamHypothesis> beam_search(const StepScorer& scorer,
                                               int vocab_size,
                                               const DecodeConfig& cfg) {
  if (cfg.beam_size < 1) throw DataError("beam_search: beam_size must be >= 1");
  if (cfg.max_len < 1) throw DataError("beam_search: max_len must be >= 1");
  if (vocab_size <= kEosId) throw DataError("beam_search: vocab too small");

  std::vector<BeamHypothesis> live{BeamHypothesis{{kBosId}, 0.0, false, false, 0.0}};
  std::vector<BeamHypothesis> pool;
  BeamHypothesis best_exhausted;
  bool have_exhausted = false;

  auto pool_insert = [&](BeamHypothesis hyp) {
    const std::size_t len = hyp.tokens.size() - 1;
    hyp.finished = true;
    hyp.score = hyp.logprob_sum / length_penalty(len, cfg.alpha);
    pool.push_back(std::move(hyp));
    std::sort(pool.begin(), pool.end(), detail::better_by_score);
    if (pool.size() > static_cast<std::size_t>(cfg.beam_size)) pool.pop_back();
  };

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    candidates.reserve(live.size() * static_cast<std::size_t>(vocab_size));
    for (const auto& hyp : live) {
      const std::vector<double> logp = scorer(hyp.tokens);
      if (logp.size() != static_cast<std::size_t>(vocab_size))
        throw DataError("beam_search: scorer returned " + std::to_string(logp.size()) +
                        " log-probs, expected " + std::to_string(vocab_size));
      for (int v = 0; v < vocab_size; ++v) {
        BeamHypothesis next = hyp;
        next.tokens.push_back(static_cast<TokenId>(v));
        next.logprob_sum += logp[static_cast<std::size_t>(v)];
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), detail::better_by_sum);
    if (candidates.size() > static_cast<std::size_t>(cfg.beam_size))
      candidates.resize(static_cast<std::size_t>(cfg.beam_size));

    live.clear();
    for (auto& cand : candidates) {
      if (cand.tokens.back() == kEosId) {
        pool_insert(std::move(cand));
      } else if (static_cast<int>(cand.tokens.size()) - 1 >= cfg.max_len) {
        if (!have_exhausted || detail::better_by_sum(cand, best_exhausted)) {
          best_exhausted = cand;
          have_exhausted = true;
        }
      } else {
        live.push_back(std::move(cand));
      }
    }

    // Safe stop: a live hypothesis only accumulates log-probs <= 0, so its
    // best achievable score is logprob_sum / lp at whichever endpoint
    // length maximizes lp (lp is monotone in length for fixed alpha).
    if (pool.size() == static_cast<std::size_t>(cfg.beam_size) && !live.empty()) {
      double best_bound = -std::numeric_limits<double>::infinity();
      for (const auto& hyp : live) {
        const std::size_t min_len = hyp.tokens.size();  // current + </S>
        const double lp_lo = length_penalty(min_len, cfg.alpha);
        const double lp_hi = length_penalty(static_cast<std::size_t>(cfg.max_len) + 1,
                                            cfg.alpha);
        const double lp_best = std::max(lp_lo, lp_hi);
        const double bound =
            hyp.logprob_sum == 0.0 ? 0.0 : hyp.logprob_sum / lp_best;
        best_bound = std::max(best_bound, bound);
      }
      if (pool.back().score >= best_bound) break;
    }
  }

  if (pool.empty()) {
    // Nothing finished within max_len: force-finish the best dead end.
    BeamHypothesis hyp;
    if (have_exhausted) {
      hyp = best_exhausted;
    } else if (!live.empty()) {
      std::sort(live.begin(), live.end(), detail::better_by_sum);
      hyp = live.front();
    } else {
      throw DataError("beam_search: no hypotheses produced");
    }
    const std::vector<double> logp = scorer(hyp.tokens);
    hyp.tokens.push_back(kEosId);
    hyp.logprob_sum += logp[static_cast<std::size_t>(kEosId)];
    hyp.forced = true;
    pool_insert(std::move(hyp));
    pool.back().forced = true;
  }
  return pool;
}

// Argmax decoding until </S> or max_len; returns content tokens only.
// Ties pick the lowest token id, matching beam search's tie-break.
inline std::vector<TokenId> greedy_decode(const StepScorer& scorer, int vocab_size,
                                          int max_len) {
  if (max_len < 1) throw DataError("greedy_decode: max_len must be >= 1");
  std::vector<TokenId> prefix{kBosId};
  std::vector<TokenId> content;
  for (int step = 0; step < max_len; ++step) {
    const std::vector<double> logp = scorer(prefix);
    if (logp.size() != static_cast<std::size_t>(vocab_size))
      throw DataError("greedy_decode: scorer output size mismatch");
    int best = 0;
    for (int v = 1; v < vocab_size; ++v)
      if (logp[static_cast<std::size_t>(v)] > logp[static_cast<std::size_t>(best)])
        best = v;
    if (best == kEosId) break;
    prefix.push_back(static_cast<TokenId>(best));
    content.push_back(static_cast<TokenId>(best));
  }
  return content;
}

// Greedy decoding with the same bookkeeping as beam_search at beam 1:
// the </S> log-probability is folded into the sum (appended by force when
// max_len is reached first) and the score is length-penalized. Output is
// identical to beam_search with beam_size = 1, token for token and bit
// for bit on the score.
inline BeamHypothesis greedy_decode_scored(const StepScorer& scorer, int vocab_size,
                                           int max_len, double alpha) {
  if (max_len < 1) throw DataError("greedy_decode_scored: max_len must be >= 1");
  BeamHypothesis hyp{{kBosId}, 0.0, false, false, 0.0};
  for (int step = 0; step < max_len; ++step) {
    const std::vector<double> logp = scorer(hyp.tokens);
    if (logp.size() != static_cast<std::size_t>(vocab_size))
      throw DataError("greedy_decode_scored: scorer output size mismatch");
    int best = 0;
    for (int v = 1; v < vocab_size; ++v)
      if (logp[static_cast<std::size_t>(v)] > logp[static_cast<std::size_t>(best)])
        best = v;
    hyp.tokens.push_back(static_cast<TokenId>(best));
    hyp.logprob_sum += logp[static_cast<std::size_t>(best)];
    if (best == kEosId) {
      hyp.finished = true;
      break;
    }
  }
  if (!hyp.finished) {
    const std::vector<double> logp = scorer(hyp.tokens);
    hyp.tokens.push_back(kEosId);
    hyp.logprob_sum += logp[static_cast<std::size_t>(kEosId)];
    hyp.finished = true;
    hyp.forced = true;
  }
  hyp.score = hyp.logprob_sum / length_penalty(hyp.tokens.size() - 1, alpha);
  return hyp;
}

// Scorer over a trained model: encodes once, then queries the decoder per
// prefix. Hidden states and parameters are shared read-only.
template <typename Real>
StepScorer model_scorer(const Transformer<Real>& model, const Matrix<Real>& h_enc,
                        const std::vector<char>* enc_pad = nullptr) {
  return [&model, h_enc, enc_pad](const std::vector<TokenId>& prefix) {
    const std::vector<Real> lp = model.decode_step(h_enc, prefix, enc_pad);
    return std::vector<double>(lp.begin(), lp.end());
  };
}

}  // namespace mskseq

// tests/test_decode.cpp
//
// Beam search against exhaustive enumeration on tiny instances, beam-1
// against greedy, ranking and tie-break determinism, and the forced-finish
// fallback.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "mskseq/decode.hpp"
#include "mskseq/nnet.hpp"
#include "mskseq/rng.hpp"

using namespace mskseq;

namespace {

// Deterministic pseudo-random scorer: the distribution over the next token
// is a pure function of (seed, prefix).
StepScorer mock_scorer(std::uint64_t seed, int vocab_size) {
  return [seed, vocab_size](const std::vector<TokenId>& prefix) {
    std::uint64_t h = seed;
    for (TokenId t : prefix) h = mix_u64(h ^ (static_cast<std::uint64_t>(t) + 0x9e37));
    Rng rng(h);
    std::vector<double> logits(static_cast<std::size_t>(vocab_size));
    for (auto& v : logits) v = rng.next_normal() * 2.0;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (auto& v : logits) v -= lse;
    return logits;
  };
}

// Exhaustive oracle: every sequence of content tokens (EOS-free) of length
// 0..max_len-1 followed by </S>, scored with the same scorer.
struct OracleHyp {
  std::vector<TokenId> tokens;  // with <S> and </S>
  double sum;
};

std::vector<OracleHyp> enumerate_all(const StepScorer& scorer, int vocab_size,
                                     int max_len) {
  std::vector<OracleHyp> out;
  std::function<void(std::vector<TokenId>&, double)> recurse =
      [&](std::vector<TokenId>& prefix, double sum) {
        const auto lp = scorer(prefix);
        {
          OracleHyp h;
          h.tokens = prefix;
          h.tokens.push_back(kEosId);
          h.sum = sum + lp[static_cast<std::size_t>(kEosId)];
          out.push_back(std::move(h));
        }
        if (static_cast<int>(prefix.size()) - 1 + 1 >= max_len) return;
        for (TokenId v = 0; v < vocab_size; ++v) {
          if (v == kEosId) continue;
          prefix.push_back(v);
          recurse(prefix, sum + lp[static_cast<std::size_t>(v)]);
          prefix.pop_back();
        }
      };
  std::vector<TokenId> prefix{kBosId};
  recurse(prefix, 0.0);
  std::sort(out.begin(), out.end(), [](const OracleHyp& a, const OracleHyp& b) {
    if (a.sum != b.sum) return a.sum > b.sum;
    return a.tokens < b.tokens;
  });
  return out;
}

}  // namespace

TEST_CASE("beam search equals exhaustive enumeration at alpha=0", "[decode]") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 17ULL, 99ULL}) {
    const auto scorer = mock_scorer(seed, 5);
    DecodeConfig cfg{625, 0.0, 4};
    const auto pool = beam_search(scorer, 5, cfg);
    const auto oracle = enumerate_all(scorer, 5, 4);
    REQUIRE(oracle.size() == 85);  // 1 + 4 + 16 + 64
    REQUIRE(pool.size() == 85);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      REQUIRE(pool[i].tokens == oracle[i].tokens);
      REQUIRE_THAT(pool[i].logprob_sum,
                   Catch::Matchers::WithinAbs(oracle[i].sum, 1e-12));
      REQUIRE_THAT(pool[i].score,
                   Catch::Matchers::WithinAbs(oracle[i].sum, 1e-12));  // alpha=0
    }
  }
}

TEST_CASE("beam 1 equals greedy on 50 random scorers", "[decode]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto scorer = mock_scorer(seed + 1000, 6);
    DecodeConfig cfg{1, 0.6, 8};
    const auto pool = beam_search(scorer, 6, cfg);
    REQUIRE(pool.size() == 1);
    const auto greedy = greedy_decode(scorer, 6, 8);
    REQUIRE(pool.front().content() == greedy);
    const auto scored = greedy_decode_scored(scorer, 6, 8, 0.6);
    REQUIRE(scored.tokens == pool.front().tokens);
    REQUIRE(scored.score == pool.front().score);  // bit-identical accumulation
    REQUIRE(scored.forced == pool.front().forced);
  }
}

TEST_CASE("alpha=0 makes ranking equal raw log-probability ranking", "[decode]") {
  const auto scorer = mock_scorer(7, 5);
  const auto pool = beam_search(scorer, 5, DecodeConfig{20, 0.0, 5});
  for (std::size_t i = 0; i < pool.size(); ++i) {
    REQUIRE(pool[i].score == pool[i].logprob_sum);
    if (i + 1 < pool.size()) REQUIRE(pool[i].score >= pool[i + 1].score);
  }
}

TEST_CASE("length penalty has the documented form", "[decode]") {
  CHECK(length_penalty(1, 0.0) == 1.0);
  CHECK_THAT(length_penalty(1, 0.6), Catch::Matchers::WithinRel(1.0, 1e-12));
  CHECK_THAT(length_penalty(7, 0.6),
             Catch::Matchers::WithinRel(std::pow(2.0, 0.6), 1e-12));
  CHECK_THAT(length_penalty(13, 1.0), Catch::Matchers::WithinRel(3.0, 1e-12));
}

TEST_CASE("hypothesis log-prob sums never increase along the sequence", "[decode]") {
  const auto scorer = mock_scorer(21, 5);
  const auto pool = beam_search(scorer, 5, DecodeConfig{8, 0.6, 6});
  for (const auto& hyp : pool) {
    REQUIRE(hyp.logprob_sum <= 0.0);
    // recompute partial sums; each extension adds a log-prob <= 0
    double sum = 0.0;
    std::vector<TokenId> prefix{kBosId};
    for (std::size_t i = 1; i < hyp.tokens.size(); ++i) {
      const auto lp = scorer(prefix);
      const double step = lp[static_cast<std::size_t>(hyp.tokens[i])];
      REQUIRE(step <= 0.0);
      const double prev = sum;
      sum += step;
      REQUIRE(sum <= prev);
      prefix.push_back(hyp.tokens[i]);
    }
    REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(hyp.logprob_sum, 1e-12));
  }
}

TEST_CASE("ties break lexicographically, making the ranking total", "[decode]") {
  // Uniform scorer: every sequence of a given length has the same score.
  const StepScorer uniform = [](const std::vector<TokenId>&) {
    return std::vector<double>(4, std::log(0.25));
  };
  const auto pool = beam_search(uniform, 4, DecodeConfig{10, 0.0, 3});
  REQUIRE(!pool.empty());
  // Shortest (just </S>) scores best at alpha=0.
  REQUIRE(pool.front().tokens == std::vector<TokenId>{kBosId, kEosId});
  for (std::size_t i = 1; i < pool.size(); ++i) {
    const bool ordered =
        pool[i - 1].score > pool[i].score ||
        (pool[i - 1].score == pool[i].score && pool[i - 1].tokens < pool[i].tokens);
    REQUIRE(ordered);
  }
  // Determinism across runs.
  const auto pool2 = beam_search(uniform, 4, DecodeConfig{10, 0.0, 3});
  REQUIRE(pool.size() == pool2.size());
  for (std::size_t i = 0; i < pool.size(); ++i)
    REQUIRE(pool[i].tokens == pool2[i].tokens);
}

TEST_CASE("no finish within max_len forces </S> and flags the output", "[decode]") {
  // </S> is practically impossible; token 0 dominates.
  const StepScorer stubborn = [](const std::vector<TokenId>&) {
    std::vector<double> lp(5, std::log(0.2));
    lp[static_cast<std::size_t>(kEosId)] = -1e9;
    lp[0] = std::log(0.9);
    return lp;
  };
  const auto pool = beam_search(stubborn, 5, DecodeConfig{3, 0.6, 4});
  REQUIRE(!pool.empty());
  CHECK(pool.front().forced);
  CHECK(pool.front().finished);
  CHECK(pool.front().tokens.back() == kEosId);
  CHECK(pool.front().tokens.size() == 6);  // <S> + 4 content + forced </S>
}

TEST_CASE("greedy stops immediately when </S> peaks", "[decode]") {
  const StepScorer eos_lover = [](const std::vector<TokenId>&) {
    std::vector<double> lp(5, std::log(0.1));
    lp[static_cast<std::size_t>(kEosId)] = std::log(0.7);
    return lp;
  };
  CHECK(greedy_decode(eos_lover, 5, 10).empty());
  const auto scored = greedy_decode_scored(eos_lover, 5, 10, 0.6);
  CHECK(scored.tokens == std::vector<TokenId>{kBosId, kEosId});
  CHECK(!scored.forced);
}

TEST_CASE("decoding a model twice is deterministic", "[decode]") {
  ModelConfig cfg;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_ff = 32;
  cfg.vocab_size = 9;
  cfg.input_dim = 5;
  cfg.dropout = 0.0;
  Transformer<double> model(cfg, init_params<double>(cfg, 3, false));
  Matrix<double> x(7, 5);
  Rng rng(8);
  for (auto& v : x.raw()) v = rng.next_normal();
  const Matrix<double> h = model.encode(x);
  const auto a = beam_search(model_scorer(model, h), 9, DecodeConfig{4, 0.6, 6});
  const auto b = beam_search(model_scorer(model, h), 9, DecodeConfig{4, 0.6, 6});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].tokens == b[i].tokens);
    REQUIRE(a[i].score == b[i].score);
  }
}

TEST_CASE("beam search validates its configuration and scorer", "[decode]") {
  const auto scorer = mock_scorer(5, 5);
  CHECK_THROWS_AS(beam_search(scorer, 5, DecodeConfig{0, 0.6, 4}), DataError);
  CHECK_THROWS_AS(beam_search(scorer, 5, DecodeConfig{4, 0.6, 0}), DataError);
  const StepScorer wrong = [](const std::vector<TokenId>&) {
    return std::vector<double>(3, -1.0);
  };
  CHECK_THROWS_AS(beam_search(wrong, 5, DecodeConfig{4, 0.6, 4}), DataError);
}

// tests/test_synthvoice.cpp
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mskseq/rng.hpp"
#include "mskseq/synthvoice.hpp"

using namespace mskseq;

namespace {

double frame_distance(std::span<const float> a, std::span<const float> b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double c = a[i] - b[i];
    d += c * c;
  }
  return std::sqrt(d);
}

double min_pairwise_distance(const std::vector<TokenTemplate>& templates) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = kNumSpecialTokens; a < templates.size(); ++a)
    for (std::size_t b = a + 1; b < templates.size(); ++b)
      for (std::size_t r = 0; r < templates[a].block.rows(); ++r)
        best = std::min(best, frame_distance(templates[a].block.row(r),
                                             templates[b].block.row(r)));
  return best;
}

}  // namespace

TEST_CASE("templates: shapes, determinism, separation", "[synthvoice]") {
  const Vocab vocab = Vocab::with_specials(
      {"a", "b", "c", "d", "e", "f", "g", "h", "i", "j",
       "k", "l", "m", "n", "o", "p", "q", "r", "s", "t"});
  SynthConfig cfg{4, 8, 0.0, 99};
  const auto t1 = build_templates(vocab, cfg);
  const auto t2 = build_templates(vocab, cfg);
  REQUIRE(t1.size() == 24);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    CHECK(t1[i].block.rows() == 4);
    CHECK(t1[i].block.cols() == 8);
    REQUIRE(t1[i].block == t2[i].block);  // bit-identical on same seed
  }
  SynthConfig other = cfg;
  other.seed = 100;
  const auto t3 = build_templates(vocab, other);
  CHECK(!(t3[4].block == t1[4].block));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig c = cfg;
    c.seed = seed;
    CHECK(min_pairwise_distance(build_templates(vocab, c)) > 0.0);
  }
}

TEST_CASE("synthesize concatenates templates", "[synthvoice]") {
  const Vocab vocab = Vocab::with_specials({"a", "b"});
  SynthConfig cfg{3, 5, 0.0, 7};
  const auto templates = build_templates(vocab, cfg);
  const TokenId a = vocab.id_or_unk("a"), b = vocab.id_or_unk("b");

  SECTION("single token with no noise equals its template exactly") {
    const FeatureMatrix f = synthesize({a}, templates, cfg, 123);
    REQUIRE(f.num_frames() == 3);
    REQUIRE(f.frames == templates[static_cast<std::size_t>(a)].block);
  }
  SECTION("two tokens: first m rows from a, next m from b") {
    const FeatureMatrix f = synthesize({a, b}, templates, cfg, 123);
    REQUIRE(f.num_frames() == 6);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(f.frames(r, c) == templates[static_cast<std::size_t>(a)].block(r, c));
        CHECK(f.frames(3 + r, c) == templates[static_cast<std::size_t>(b)].block(r, c));
      }
  }
  SECTION("unknown and uncovered tokens are rejected") {
    CHECK_THROWS_AS(synthesize({kUnkId}, templates, cfg, 1), DataError);
    CHECK_THROWS_AS(synthesize({99}, templates, cfg, 1), DataError);
    CHECK_THROWS_AS(synthesize({}, templates, cfg, 1), DataError);
  }
  SECTION("same utterance seed reproduces bit-identically, with noise") {
    SynthConfig noisy = cfg;
    noisy.noise_std = 0.05;
    const FeatureMatrix f1 = synthesize({a, b, a}, templates, noisy, 55);
    const FeatureMatrix f2 = synthesize({a, b, a}, templates, noisy, 55);
    REQUIRE(f1.frames == f2.frames);
    const FeatureMatrix f3 = synthesize({a, b, a}, templates, noisy, 56);
    CHECK(!(f3.frames == f1.frames));
  }
}

TEST_CASE("jitter has the configured standard deviation", "[synthvoice]") {
  const Vocab vocab = Vocab::with_specials({"a"});
  SynthConfig cfg{4, 10, 0.01, 3};
  const auto templates = build_templates(vocab, cfg);
  const TokenId a = vocab.id_or_unk("a");
  double sum = 0, sumsq = 0;
  std::size_t n = 0;
  for (std::uint64_t u = 0; u < 300; ++u) {
    const FeatureMatrix f = synthesize(std::vector<TokenId>(10, a), templates, cfg,
                                       split_seed(9, "jitter", u));
    for (std::size_t r = 0; r < f.num_frames(); ++r)
      for (std::size_t c = 0; c < f.dim(); ++c) {
        const double dev =
            f.frames(r, c) - templates[static_cast<std::size_t>(a)].block(r % 4, c);
        sum += dev;
        sumsq += dev * dev;
        ++n;
      }
  }
  const double mean = sum / static_cast<double>(n);
  const double std_dev = std::sqrt(sumsq / static_cast<double>(n) - mean * mean);
  CHECK_THAT(std_dev, Catch::Matchers::WithinAbs(0.01, 0.001));  // within 10%
}

TEST_CASE("nearest-template classifier recovers the transcript at zero noise",
          "[synthvoice]") {
  const Vocab vocab = Vocab::with_specials(
      {"t00", "t01", "t02", "t03", "t04", "t05", "t06", "t07", "t08", "t09",
       "t10", "t11", "t12", "t13", "t14", "t15", "t16", "t17", "t18", "t19"});
  SynthConfig cfg{4, 8, 0.0, 17};
  const auto templates = build_templates(vocab, cfg);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenId> transcript;
    const std::size_t len = 1 + rng.next_below(10);
    for (std::size_t i = 0; i < len; ++i)
      transcript.push_back(static_cast<TokenId>(kNumSpecialTokens + rng.next_below(20)));
    const FeatureMatrix f = synthesize(transcript, templates, cfg, rng.next_u64());
    // classify each m-frame block by nearest template
    for (std::size_t p = 0; p < len; ++p) {
      TokenId best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t v = kNumSpecialTokens; v < templates.size(); ++v) {
        double d = 0;
        for (std::size_t r = 0; r < 4; ++r)
          for (std::size_t c = 0; c < 8; ++c) {
            const double diff = f.frames(p * 4 + r, c) - templates[v].block(r, c);
            d += diff * diff;
          }
        if (d < best_d) {
          best_d = d;
          best = static_cast<TokenId>(v);
        }
      }
      REQUIRE(best == transcript[p]);
    }
  }
}

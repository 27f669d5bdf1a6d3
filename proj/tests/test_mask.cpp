// tests/test_mask.cpp
//
// Chunk sampling and application. Clamping is checked against the direct
// max/min arithmetic, masking statistics against closed-form expectations,
// and apply_plan against a set-union oracle over frame indices.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "mskseq/mask.hpp"
#include "mskseq/rng.hpp"

using namespace mskseq;

namespace {

// Scans seeds until a 1-chunk plan with the wanted (center, width) shows up.
MaskPlan find_plan_with(std::size_t t, int max_w, std::size_t center, int width) {
  MaskConfig cfg{1, max_w, 0.8};
  for (std::uint64_t seed = 0; seed < 2000000; ++seed) {
    const MaskPlan plan = sample_plan(t, cfg, seed);
    if (plan.chunks[0].center == center && plan.chunks[0].half_width == width)
      return plan;
  }
  FAIL("no seed produced the requested chunk");
  return {};
}

FeatureMatrix random_features(std::size_t t, std::size_t d, std::uint64_t seed) {
  FeatureMatrix f;
  f.frames = Matrix<float>(t, d);
  Rng rng(seed);
  for (auto& v : f.frames.raw()) v = static_cast<float>(rng.next_normal() + 2.0);
  return f;
}

}  // namespace

TEST_CASE("chunk ranges follow the clamp arithmetic", "[mask]") {
  SECTION("center 5, width 3 on T=100 covers [2, 8]") {
    const MaskPlan plan = find_plan_with(100, 10, 5, 3);
    CHECK(plan.chunks[0].start == 2);
    CHECK(plan.chunks[0].end == 8);
  }
  SECTION("center 0, width 5 clamps left to [0, 5]") {
    const MaskPlan plan = find_plan_with(100, 10, 0, 5);
    CHECK(plan.chunks[0].start == 0);
    CHECK(plan.chunks[0].end == 5);
  }
  SECTION("center T-1 clamps right") {
    const MaskPlan plan = find_plan_with(20, 10, 19, 4);
    CHECK(plan.chunks[0].start == 15);
    CHECK(plan.chunks[0].end == 19);
  }
  SECTION("clamp formula holds for every sampled chunk") {
    MaskConfig cfg{3, 12, 0.8};
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
      const MaskPlan plan = sample_plan(37, cfg, seed);
      for (const auto& c : plan.chunks) {
        const auto w = static_cast<std::size_t>(c.half_width);
        CHECK(c.start == (c.center >= w ? c.center - w : 0));
        CHECK(c.end == std::min(c.center + w, std::size_t{36}));
        CHECK(c.start <= c.center);
        CHECK(c.center <= c.end);
        CHECK(c.end - c.start <= 2 * w);
      }
    }
  }
}

TEST_CASE("one shared half-width per utterance, K chunks", "[mask]") {
  MaskConfig cfg{4, 9, 0.8};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const MaskPlan plan = sample_plan(50, cfg, seed);
    REQUIRE(plan.chunks.size() == 4);
    for (const auto& c : plan.chunks)
      CHECK(c.half_width == plan.chunks[0].half_width);
  }
}

TEST_CASE("plans are a pure function of (seed, T, cfg)", "[mask]") {
  MaskConfig cfg{2, 10, 0.8};
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xdeadbeefULL}) {
    const MaskPlan a = sample_plan(64, cfg, seed);
    const MaskPlan b = sample_plan(64, cfg, seed);
    REQUIRE(a.chunks.size() == b.chunks.size());
    for (std::size_t i = 0; i < a.chunks.size(); ++i) {
      CHECK(a.chunks[i].center == b.chunks[i].center);
      CHECK(a.chunks[i].half_width == b.chunks[i].half_width);
      CHECK(a.chunks[i].start == b.chunks[i].start);
      CHECK(a.chunks[i].zeroed == b.chunks[i].zeroed);
    }
  }
  const MaskPlan a = sample_plan(64, cfg, 7);
  const MaskPlan c = sample_plan(64, cfg, 8);
  const bool differs = a.chunks[0].center != c.chunks[0].center ||
                       a.chunks[0].half_width != c.chunks[0].half_width ||
                       a.chunks[1].center != c.chunks[1].center;
  CHECK(differs);
}

TEST_CASE("empty sequences are rejected", "[mask]") {
  CHECK_THROWS_AS(sample_plan(0, MaskConfig{}, 1), DataError);
}

TEST_CASE("masking statistics match closed-form expectations", "[mask]") {
  MaskConfig cfg{2, 10, 0.8};
  const std::size_t t = 60;
  std::size_t zeroed = 0, total = 0;
  double w_sum = 0;
  std::size_t plans = 20000;
  for (std::uint64_t seed = 0; seed < plans; ++seed) {
    const MaskPlan plan = sample_plan(t, cfg, split_seed(1234, "stats", seed));
    w_sum += plan.chunks[0].half_width;
    for (const auto& c : plan.chunks) {
      ++total;
      if (c.zeroed) ++zeroed;
    }
  }
  const double zero_frac = static_cast<double>(zeroed) / static_cast<double>(total);
  CHECK(zero_frac > 0.79);
  CHECK(zero_frac < 0.81);
  const double mean_w = w_sum / static_cast<double>(plans);
  CHECK_THAT(mean_w, Catch::Matchers::WithinAbs(5.0, 0.1));  // W/2 within 2%
}

TEST_CASE("chunk centers are uniform over frames", "[mask]") {
  MaskConfig cfg{1, 0, 0.8};
  const std::size_t t = 16;
  const std::size_t draws = 200000;
  std::vector<std::size_t> hist(t, 0);
  for (std::uint64_t seed = 0; seed < draws; ++seed)
    ++hist[sample_plan(t, cfg, split_seed(88, "uniform", seed)).chunks[0].center];
  const double expected = static_cast<double>(draws) / static_cast<double>(t);
  const double sigma = std::sqrt(expected * (1.0 - 1.0 / static_cast<double>(t)));
  for (std::size_t bin = 0; bin < t; ++bin)
    CHECK(std::abs(static_cast<double>(hist[bin]) - expected) < 5.0 * sigma);
}

TEST_CASE("apply_plan zeroes exactly the zeroed chunks", "[mask]") {
  SECTION("one zeroed chunk [2,4] on T=6") {
    const FeatureMatrix f = random_features(6, 3, 5);
    MaskPlan plan;
    plan.num_frames = 6;
    plan.chunks.push_back({3, 1, 2, 4, true});
    const FeatureMatrix out = apply_plan(f, plan);
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t j = 0; j < 3; ++j) {
        if (t >= 2 && t <= 4)
          REQUIRE(out.frames(t, j) == 0.0f);
        else
          REQUIRE(out.frames(t, j) == f.frames(t, j));
      }
    // input not mutated
    CHECK(f.frames(2, 0) != 0.0f);
  }
  SECTION("all chunks kept leaves input untouched") {
    const FeatureMatrix f = random_features(10, 4, 6);
    MaskPlan plan;
    plan.num_frames = 10;
    plan.chunks.push_back({1, 2, 0, 3, false});
    plan.chunks.push_back({7, 2, 5, 9, false});
    const FeatureMatrix out = apply_plan(f, plan);
    CHECK(out.frames == f.frames);
  }
  SECTION("overlapping zeroed chunks: set-union oracle, idempotent") {
    const FeatureMatrix f = random_features(12, 2, 7);
    MaskPlan plan;
    plan.num_frames = 12;
    plan.chunks.push_back({3, 2, 2, 5, true});
    plan.chunks.push_back({5, 2, 4, 7, true});
    std::set<std::size_t> zeroed_frames;
    for (const auto& c : plan.chunks)
      for (std::size_t t = c.start; t <= c.end; ++t) zeroed_frames.insert(t);
    const FeatureMatrix once = apply_plan(f, plan);
    const FeatureMatrix twice = apply_plan(once, plan);
    CHECK(once.frames == twice.frames);
    for (std::size_t t = 0; t < 12; ++t)
      for (std::size_t j = 0; j < 2; ++j) {
        if (zeroed_frames.count(t))
          REQUIRE(once.frames(t, j) == 0.0f);
        else
          REQUIRE(once.frames(t, j) == f.frames(t, j));
      }
  }
  SECTION("length mismatch rejected") {
    const FeatureMatrix f = random_features(5, 2, 8);
    MaskPlan plan;
    plan.num_frames = 6;
    plan.chunks.push_back({0, 0, 0, 0, true});
    CHECK_THROWS_AS(apply_plan(f, plan), DataError);
  }
}

TEST_CASE("apply_plan never touches frames outside zeroed chunks", "[mask]") {
  MaskConfig cfg{2, 4, 0.8};
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t t = 1 + (seed % 17);
    const FeatureMatrix f = random_features(t, 3, seed + 1000);
    const MaskPlan plan = sample_plan(t, cfg, seed);
    const FeatureMatrix out = apply_plan(f, plan);
    std::set<std::size_t> zeroed;
    for (const auto& c : plan.chunks)
      if (c.zeroed)
        for (std::size_t i = c.start; i <= c.end; ++i) zeroed.insert(i);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        if (zeroed.count(i))
          REQUIRE(out.frames(i, j) == 0.0f);
        else
          REQUIRE(out.frames(i, j) == f.frames(i, j));
      }
  }
}

TEST_CASE("masked_indices enumerates per-chunk frames with duplicates", "[mask]") {
  SECTION("chunk [2,4]") {
    MaskPlan plan;
    plan.num_frames = 10;
    plan.chunks.push_back({3, 1, 2, 4, true});
    const auto idx = masked_indices(plan);
    REQUIRE(idx.size() == 3);
    CHECK(idx[0] == std::make_pair(std::size_t{0}, std::size_t{2}));
    CHECK(idx[2] == std::make_pair(std::size_t{0}, std::size_t{4}));
  }
  SECTION("w=0 degenerate chunk is a single index") {
    MaskPlan plan;
    plan.num_frames = 10;
    plan.chunks.push_back({7, 0, 7, 7, false});
    const auto idx = masked_indices(plan);
    REQUIRE(idx.size() == 1);
    CHECK(idx[0] == std::make_pair(std::size_t{0}, std::size_t{7}));
  }
  SECTION("overlapping chunks keep duplicates, one per chunk") {
    MaskPlan plan;
    plan.num_frames = 10;
    plan.chunks.push_back({3, 1, 2, 5, true});
    plan.chunks.push_back({5, 1, 4, 7, true});
    const auto idx = masked_indices(plan);
    REQUIRE(idx.size() == 8);  // 4 + 4, frames 4 and 5 appear twice
    // per-chunk enumeration oracle
    std::size_t pos = 0;
    for (std::size_t i = 0; i < plan.chunks.size(); ++i)
      for (std::size_t t = plan.chunks[i].start; t <= plan.chunks[i].end; ++t)
        REQUIRE(idx[pos++] == std::make_pair(i, t));
    std::size_t count4 = 0, count5 = 0;
    for (const auto& [chunk, frame] : idx) {
      if (frame == 4) ++count4;
      if (frame == 5) ++count5;
    }
    CHECK(count4 == 2);
    CHECK(count5 == 2);
  }
}

TEST_CASE("mask plan dump format", "[mask]") {
  MaskPlan plan;
  plan.num_frames = 30;
  plan.chunks.push_back({5, 3, 2, 8, true});
  plan.chunks.push_back({20, 3, 17, 23, false});
  CHECK(format_plan("utt9", plan) == "utt9\t3\t2,8,1\t17,23,0");
}

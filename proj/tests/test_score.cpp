// tests/test_score.cpp
//
// Edit-distance scoring against an independent memoized recursion, metric
// properties on random sequences, tokenization modes, and the corpus
// aggregation counterexample.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include "mskseq/rng.hpp"
#include "mskseq/score.hpp"

using namespace mskseq;

namespace {

// Independent oracle: plain memoized recursion over suffixes.
std::size_t oracle_distance(const std::vector<std::string>& a,
                            const std::vector<std::string>& b, std::size_t i,
                            std::size_t j,
                            std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  std::size_t best = oracle_distance(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1);
  best = std::min(best, oracle_distance(a, b, i + 1, j, memo) + 1);
  best = std::min(best, oracle_distance(a, b, i, j + 1, memo) + 1);
  memo[key] = best;
  return best;
}

std::size_t oracle_distance(const std::vector<std::string>& a,
                            const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  return oracle_distance(a, b, 0, 0, memo);
}

std::vector<std::string> chars_of(const std::string& s) {
  std::vector<std::string> out;
  for (char c : s) out.emplace_back(1, c);
  return out;
}

std::vector<std::string> random_seq(Rng& rng, std::size_t max_len, int alphabet) {
  std::vector<std::string> out(rng.next_below(max_len + 1));
  for (auto& s : out) s = std::string(1, static_cast<char>('a' + rng.next_below(alphabet)));
  return out;
}

}  // namespace

TEST_CASE("edit distance basics", "[score]") {
  SECTION("identical sequences") {
    const auto c = edit_distance(chars_of("hello"), chars_of("hello"));
    CHECK(c.total_errors() == 0);
    CHECK(c.reference_length == 5);
  }
  SECTION("kitten -> sitting is 3 (oracle-checked)") {
    const auto ref = chars_of("kitten");
    const auto hyp = chars_of("sitting");
    const auto c = edit_distance(ref, hyp);
    CHECK(c.total_errors() == 3);
    CHECK(c.total_errors() == oracle_distance(ref, hyp));
    // canonical alignment: 2 substitutions (k->s, e->i) + 1 insertion (g)
    CHECK(c.substitutions == 2);
    CHECK(c.insertions == 1);
    CHECK(c.deletions == 0);
  }
  SECTION("empty reference gives pure insertions") {
    const auto c = edit_distance({}, chars_of("abcd"));
    CHECK(c.insertions == 4);
    CHECK(c.substitutions == 0);
    CHECK(c.deletions == 0);
    CHECK(c.reference_length == 0);
  }
  SECTION("empty hypothesis gives pure deletions") {
    const auto c = edit_distance(chars_of("abc"), {});
    CHECK(c.deletions == 3);
  }
}

TEST_CASE("edit distance matches the memoized oracle on random pairs", "[score]") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = random_seq(rng, 10, 4);
    const auto b = random_seq(rng, 10, 4);
    const auto c = edit_distance(a, b);
    REQUIRE(c.total_errors() == oracle_distance(a, b));
    REQUIRE(c.reference_length == a.size());
    // decomposition accounting: |ref| + I - D == |hyp|
    REQUIRE(a.size() + c.insertions - c.deletions == b.size());
  }
}

TEST_CASE("edit distance is a metric", "[score]") {
  Rng rng(32);
  for (int trial = 0; trial < 150; ++trial) {
    const auto a = random_seq(rng, 8, 3);
    const auto b = random_seq(rng, 8, 3);
    const auto c = random_seq(rng, 8, 3);
    const auto dab = edit_distance(a, b).total_errors();
    const auto dba = edit_distance(b, a).total_errors();
    const auto dac = edit_distance(a, c).total_errors();
    const auto dcb = edit_distance(c, b).total_errors();
    REQUIRE(dab == dba);                 // symmetry of the distance value
    REQUIRE(dab <= dac + dcb);           // triangle inequality
    REQUIRE((dab == 0) == (a == b));     // identity of indiscernibles
  }
}

TEST_CASE("distance is invariant under symbol relabeling", "[score]") {
  Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_seq(rng, 8, 4);
    const auto b = random_seq(rng, 8, 4);
    auto relabel = [](const std::vector<std::string>& v) {
      std::vector<std::string> out;
      for (const auto& s : v) out.push_back("tok_" + s + "_x");
      return out;
    };
    REQUIRE(edit_distance(a, b).total_errors() ==
            edit_distance(relabel(a), relabel(b)).total_errors());
  }
}

TEST_CASE("error rate arithmetic", "[score]") {
  ErrorCounts c;
  c.reference_length = 10;
  CHECK(error_rate(c) == 0.0);
  c.substitutions = 4;
  c.insertions = 3;
  c.deletions = 3;
  CHECK(error_rate(c) == 100.0);
  c.insertions = 13;
  CHECK(error_rate(c) == 200.0);  // may exceed 100
  ErrorCounts zero;
  CHECK_THROWS_AS(error_rate(zero), DataError);
}

TEST_CASE("corpus aggregation pools counts, not per-utterance rates", "[score]") {
  // utterance 1: ref length 1, 1 error -> 100%
  // utterance 2: ref length 9, 0 errors -> 0%
  // mean of rates = 50%, pooled rate = 1/10 = 10%
  const auto c1 = edit_distance(chars_of("a"), chars_of("b"));
  const auto c2 = edit_distance(chars_of("abcdefghi"), chars_of("abcdefghi"));
  ErrorCounts pooled = c1;
  pooled += c2;
  const double pooled_rate = error_rate(pooled);
  const double mean_rate = (error_rate(c1) + error_rate(c2)) / 2.0;
  CHECK(pooled_rate == 10.0);
  CHECK(mean_rate == 50.0);
  CHECK(pooled_rate != mean_rate);
}

TEST_CASE("tokenize_for_metric modes", "[score]") {
  SECTION("char mode drops whitespace, splits scalars") {
    const auto syms = tokenize_for_metric("ab c", MetricMode::kChar);
    REQUIRE(syms == std::vector<std::string>{"a", "b", "c"});
  }
  SECTION("char mode handles multi-byte UTF-8") {
    const auto syms = tokenize_for_metric("\xe4\xbd\xa0 \xe5\xa5\xbd", MetricMode::kChar);
    REQUIRE(syms.size() == 2);
    CHECK(syms[0] == "\xe4\xbd\xa0");
    CHECK(syms[1] == "\xe5\xa5\xbd");
  }
  SECTION("word mode splits on whitespace") {
    const auto syms = tokenize_for_metric("ab c", MetricMode::kWord);
    REQUIRE(syms == std::vector<std::string>{"ab", "c"});
  }
  SECTION("word-mode round trip reproduces normalized text") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      std::string text;
      const std::size_t words = rng.next_below(6);
      for (std::size_t w = 0; w < words; ++w) {
        for (std::size_t s = 0; s < 1 + rng.next_below(3); ++s) text += ' ';
        const std::size_t len = 1 + rng.next_below(5);
        for (std::size_t c = 0; c < len; ++c)
          text += static_cast<char>('a' + rng.next_below(26));
      }
      const auto syms = tokenize_for_metric(text, MetricMode::kWord);
      std::string joined;
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i) joined += ' ';
        joined += syms[i];
      }
      const auto resplit = tokenize_for_metric(joined, MetricMode::kWord);
      REQUIRE(resplit == syms);
    }
  }
  SECTION("piece mode longest-matches against the vocab") {
    const Vocab v = Vocab::with_specials({"ab", "abc", "d"});
    const auto syms = tokenize_for_metric("abcd abd", MetricMode::kPiece, &v);
    REQUIRE(syms == std::vector<std::string>{"abc", "d", "ab", "d"});
  }
  SECTION("piece mode without vocab is rejected") {
    CHECK_THROWS_AS(tokenize_for_metric("x", MetricMode::kPiece, nullptr), DataError);
  }
}

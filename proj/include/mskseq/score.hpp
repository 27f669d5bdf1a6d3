// mskseq/score.hpp
//
// Character/word error rate scoring: Levenshtein alignment with unit
// costs and a fixed backtrace tie-break (substitution, then deletion,
// then insertion) so the S/I/D decomposition is deterministic.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/vocab.hpp"

namespace mskseq {

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t total_errors() const { return substitutions + insertions + deletions; }

  ErrorCounts& operator+=(const ErrorCounts& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    reference_length += o.reference_length;
    return *this;
  }
};

// Minimal-cost alignment of hyp against ref with unit costs.
// dp[i][j] = distance between ref[0..i) and hyp[0..j). When several
// alignments tie, the backtrace prefers substitution over deletion over
// insertion.
inline ErrorCounts edit_distance(const std::vector<std::string>& ref,
                                 const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return dp[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const std::size_t del = at(i - 1, j) + 1;
      const std::size_t ins = at(i, j - 1) + 1;
      at(i, j) = std::min({sub, del, ins});
    }

  ErrorCounts counts;
  counts.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++counts.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++counts.deletions;
      --i;
    } else {
      ++counts.insertions;
      --j;
    }
  }
  return counts;
}

// 100 * (S + I + D) / reference_length; may exceed 100.
inline double error_rate(const ErrorCounts& counts) {
  if (counts.reference_length == 0)
    throw DataError("error_rate: zero reference length");
  return 100.0 * static_cast<double>(counts.total_errors()) /
         static_cast<double>(counts.reference_length);
}

enum class MetricMode { kChar, kWord, kPiece };

inline MetricMode parse_metric_mode(const std::string& s) {
  if (s == "char") return MetricMode::kChar;
  if (s == "word") return MetricMode::kWord;
  if (s == "piece") return MetricMode::kPiece;
  throw DataError("unknown metric mode '" + s + "' (expected char|word|piece)");
}

namespace detail {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Decodes one UTF-8 scalar value starting at i; malformed bytes are kept
// as single-byte symbols rather than rejected.
inline std::string next_utf8(const std::string& text, std::size_t& i) {
  const auto first = static_cast<unsigned char>(text[i]);
  std::size_t len = 1;
  if ((first & 0x80) == 0x00) len = 1;
  else if ((first & 0xe0) == 0xc0) len = 2;
  else if ((first & 0xf0) == 0xe0) len = 3;
  else if ((first & 0xf8) == 0xf0) len = 4;
  if (i + len > text.size()) len = 1;
  for (std::size_t k = 1; k < len; ++k)
    if ((static_cast<unsigned char>(text[i + k]) & 0xc0) != 0x80) {
      len = 1;
      break;
    }
  std::string sym = text.substr(i, len);
  i += len;
  return sym;
}

}  // namespace detail

// char mode: Unicode scalar values, whitespace excluded (the usual CER
// convention). word mode: whitespace-separated. piece mode: greedy
// longest-match segmentation against the corpus vocab; unmatched bytes
// become single-character symbols.
inline std::vector<std::string> tokenize_for_metric(const std::string& text,
                                                    MetricMode mode,
                                                    const Vocab* vocab = nullptr) {
  std::vector<std::string> symbols;
  switch (mode) {
    case MetricMode::kChar: {
      std::size_t i = 0;
      while (i < text.size()) {
        if (detail::is_ascii_space(text[i])) {
          ++i;
          continue;
        }
        symbols.push_back(detail::next_utf8(text, i));
      }
      break;
    }
    case MetricMode::kWord: {
      std::size_t i = 0;
      while (i < text.size()) {
        while (i < text.size() && detail::is_ascii_space(text[i])) ++i;
        std::size_t start = i;
        while (i < text.size() && !detail::is_ascii_space(text[i])) ++i;
        if (i > start) symbols.push_back(text.substr(start, i - start));
      }
      break;
    }
    case MetricMode::kPiece: {
      if (vocab == nullptr)
        throw DataError("tokenize_for_metric: piece mode needs a vocab");
      std::size_t i = 0;
      while (i < text.size()) {
        if (detail::is_ascii_space(text[i])) {
          ++i;
          continue;
        }
        std::size_t best = 0;
        for (std::size_t len = text.size() - i; len >= 1; --len) {
          if (vocab->contains(text.substr(i, len))) {
            best = len;
            break;
          }
        }
        if (best == 0) {
          symbols.push_back(detail::next_utf8(text, i));
        } else {
          symbols.push_back(text.substr(i, best));
          i += best;
        }
      }
      break;
    }
  }
  return symbols;
}

}  // namespace mskseq

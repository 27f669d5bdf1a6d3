// mskseq/rng.hpp
//
// Deterministic 64-bit counter-based random number generation.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mskseq {

// SplitMix64 (Steele, Lea, Flood 2014). The state advances by a fixed
// odd constant, so the n-th output is a pure function of (seed, n) and
// the stream is identical on every platform. All sampling in this
// project goes through this generator; nothing uses std:: distributions,
// whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform integer in {0, ..., n-1} via Lemire multiply-shift.
  // Bias is at most n / 2^64, far below anything observable here.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. No caching of the second value:
  // each call consumes exactly two raw draws, keeping the stream
  // position a pure function of the call count.
  double next_normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
};

// FNV-1a over raw bytes; used to fold strings into seed material.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_u64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Splittable per-utterance seed: hash(global_seed, utterance_id, epoch).
// Every per-utterance random decision (masking, synthesis jitter) derives
// from this, so results do not depend on worker count or batch layout.
inline std::uint64_t split_seed(std::uint64_t global_seed,
                                std::string_view utterance_id,
                                std::uint64_t epoch = 0) {
  std::uint64_t h = mix_u64(global_seed ^ 0x6a09e667f3bcc909ULL);
  h = mix_u64(h ^ fnv1a(utterance_id));
  h = mix_u64(h ^ epoch);
  return h;
}

}  // namespace mskseq

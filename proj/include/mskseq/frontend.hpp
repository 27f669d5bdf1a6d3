// mskseq/frontend.hpp
//
// Acoustic feature frontend: log-mel filterbank extraction, per-speaker
// mean/variance normalization, and left-context frame stacking with
// downsampling.
//
// Conventions (the literature leaves these open, so they are fixed here
// and must not drift, or features stop being bit-compatible):
//   - mel scale: HTK, mel(f) = 2595 * log10(1 + f/700)
//   - triangular filters with weights computed in the mel domain,
//     band edges at 0 Hz and Nyquist
//   - periodic Hann window, no pre-emphasis, no dither
//   - natural log of mel energies, floored at kLogFloorEps
//   - stacking pads the left edge by repeating frame 0
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/io.hpp"
#include "mskseq/matrix.hpp"

namespace mskseq {

inline constexpr double kLogFloorEps = 1e-10;
inline constexpr double kVarianceEps = 1e-8;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        std::complex<double> u = a[i + j];
        std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Triangular mel filterbank: n_mels x (n_fft/2 + 1) weights.
inline Matrix<double> build_mel_filterbank(int n_mels, std::size_t n_fft,
                                           double sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> mel_pts(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < mel_pts.size(); ++i)
    mel_pts[i] = mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                              static_cast<double>(n_mels + 1);
  Matrix<double> fb(static_cast<std::size_t>(n_mels), n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double mel_k = hz_to_mel(static_cast<double>(k) * sample_rate /
                                   static_cast<double>(n_fft));
    for (int m = 0; m < n_mels; ++m) {
      const double left = mel_pts[static_cast<std::size_t>(m)];
      const double center = mel_pts[static_cast<std::size_t>(m) + 1];
      const double right = mel_pts[static_cast<std::size_t>(m) + 2];
      double w = 0.0;
      if (mel_k >= left && mel_k <= center && center > left)
        w = (mel_k - left) / (center - left);
      else if (mel_k > center && mel_k <= right && right > center)
        w = (right - mel_k) / (right - center);
      fb(static_cast<std::size_t>(m), k) = w;
    }
  }
  return fb;
}

// Center frequency (Hz) of a mel filter; used by tests and tooling.
inline double mel_filter_center_hz(int mel_bin, int n_mels, double sample_rate) {
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  return mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(mel_bin + 1) /
                                static_cast<double>(n_mels + 1));
}

// Log-mel filterbank features. Frame t covers samples
// [t*hop, t*hop + win), so T = 1 + floor((len - win) / hop).
inline FeatureMatrix extract_logmel(const Waveform& w, int n_mels = 80,
                                    double win_ms = 25.0, double hop_ms = 10.0) {
  if (w.sample_rate <= 0) throw DataError("extract_logmel: non-positive sample rate");
  if (n_mels < 1) throw std::invalid_argument("extract_logmel: n_mels must be >= 1");
  const auto win = static_cast<std::size_t>(
      std::lround(win_ms * w.sample_rate / 1000.0));
  const auto hop = static_cast<std::size_t>(
      std::lround(hop_ms * w.sample_rate / 1000.0));
  if (win == 0 || hop == 0)
    throw std::invalid_argument("extract_logmel: window/hop shorter than one sample");
  if (w.samples.size() < win)
    throw DataError("extract_logmel: waveform has " +
                    std::to_string(w.samples.size()) + " samples, shorter than one " +
                    std::to_string(win) + "-sample window");

  const std::size_t t_out = 1 + (w.samples.size() - win) / hop;
  const std::size_t n_fft = next_pow2(win);
  const std::size_t n_bins = n_fft / 2 + 1;

  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n)
    window[n] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(n) /
                                     static_cast<double>(win));

  const Matrix<double> fb = build_mel_filterbank(n_mels, n_fft, w.sample_rate);

  FeatureMatrix out;
  out.frames = Matrix<float>(t_out, static_cast<std::size_t>(n_mels));
  out.frame_rate = static_cast<float>(1000.0 / hop_ms);

  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_bins);
  for (std::size_t t = 0; t < t_out; ++t) {
    for (std::size_t n = 0; n < win; ++n)
      buf[n] = {static_cast<double>(w.samples[t * hop + n]) * window[n], 0.0};
    for (std::size_t n = win; n < n_fft; ++n) buf[n] = {0.0, 0.0};
    fft_radix2(buf);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k)
        e += fb(static_cast<std::size_t>(m), k) * power[k];
      out.frames(t, static_cast<std::size_t>(m)) =
          static_cast<float>(std::log(e < kLogFloorEps ? kLogFloorEps : e));
    }
  }
  return out;
}

// ------------------------------------------------------- speaker statistics

struct SpeakerStats {
  std::string speaker_id;
  std::vector<double> mean;
  std::vector<double> variance;  // biased (population) variance
  std::size_t frame_count = 0;
};

// Per-speaker mean and biased variance over all frames of that speaker.
// Stats appear in order of first appearance in the input; the accumulation
// order inside a speaker is the input order, which makes parallel callers
// responsible for merging partial sums in a fixed order if they need
// bit-exact results. Speakers contributing zero frames are skipped and
// reported through `warnings` when given.
inline std::vector<SpeakerStats> accumulate_speaker_stats(
    const std::vector<std::pair<std::string, const FeatureMatrix*>>& feats,
    std::vector<std::string>* warnings = nullptr) {
  std::vector<SpeakerStats> stats;
  std::vector<std::vector<double>> sumsq;
  auto find = [&](const std::string& id) -> std::size_t {
    for (std::size_t i = 0; i < stats.size(); ++i)
      if (stats[i].speaker_id == id) return i;
    stats.push_back(SpeakerStats{id, {}, {}, 0});
    sumsq.emplace_back();
    return stats.size() - 1;
  };
  for (const auto& [speaker, fm] : feats) {
    if (fm->num_frames() == 0) {
      if (warnings)
        warnings->push_back("speaker '" + speaker + "': utterance with zero frames skipped");
      continue;
    }
    std::size_t idx = find(speaker);
    SpeakerStats& s = stats[idx];
    const std::size_t d = fm->dim();
    if (s.mean.empty()) {
      s.mean.assign(d, 0.0);
      sumsq[idx].assign(d, 0.0);
    } else if (s.mean.size() != d) {
      throw DataError("speaker '" + speaker + "': inconsistent feature dim " +
                      std::to_string(d) + " vs " + std::to_string(s.mean.size()));
    }
    for (std::size_t t = 0; t < fm->num_frames(); ++t) {
      auto row = fm->frames.row(t);
      for (std::size_t j = 0; j < d; ++j) {
        const double v = row[j];
        s.mean[j] += v;
        sumsq[idx][j] += v * v;
      }
    }
    s.frame_count += fm->num_frames();
  }
  std::vector<SpeakerStats> result;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    SpeakerStats& s = stats[i];
    if (s.frame_count == 0) {
      if (warnings)
        warnings->push_back("speaker '" + s.speaker_id + "': no frames, excluded");
      continue;
    }
    const double n = static_cast<double>(s.frame_count);
    for (std::size_t j = 0; j < s.mean.size(); ++j) {
      s.mean[j] /= n;
      s.variance.push_back(sumsq[i][j] / n - s.mean[j] * s.mean[j]);
      if (s.variance[j] < 0.0) s.variance[j] = 0.0;  // rounding guard
    }
    result.push_back(std::move(s));
  }
  return result;
}

// out = (in - mean) / sqrt(variance + kVarianceEps)
inline FeatureMatrix normalize(const FeatureMatrix& f, const SpeakerStats& s) {
  if (f.dim() != s.mean.size())
    throw DataError("normalize: feature dim " + std::to_string(f.dim()) +
                    " does not match stats dim " + std::to_string(s.mean.size()));
  FeatureMatrix out;
  out.frame_rate = f.frame_rate;
  out.frames = Matrix<float>(f.num_frames(), f.dim());
  std::vector<double> inv_std(f.dim());
  for (std::size_t j = 0; j < f.dim(); ++j)
    inv_std[j] = 1.0 / std::sqrt(s.variance[j] + kVarianceEps);
  for (std::size_t t = 0; t < f.num_frames(); ++t)
    for (std::size_t j = 0; j < f.dim(); ++j)
      out.frames(t, j) = static_cast<float>(
          (static_cast<double>(f.frames(t, j)) - s.mean[j]) * inv_std[j]);
  return out;
}

// Output frame t' concatenates input frames [factor*t' - left, factor*t'],
// clamping negative indices to frame 0. Output dim = (left+1) * d,
// T' = ceil(T / factor), frame_rate divides by factor.
inline FeatureMatrix stack_and_downsample(const FeatureMatrix& f, int left = 3,
                                          int factor = 3) {
  if (left < 0) throw std::invalid_argument("stack_and_downsample: left must be >= 0");
  if (factor < 1) throw std::invalid_argument("stack_and_downsample: factor must be >= 1");
  const std::size_t t_in = f.num_frames();
  const std::size_t d = f.dim();
  const std::size_t t_out = (t_in + static_cast<std::size_t>(factor) - 1) /
                            static_cast<std::size_t>(factor);
  FeatureMatrix out;
  out.frame_rate = f.frame_rate / static_cast<float>(factor);
  out.frames = Matrix<float>(t_out, (static_cast<std::size_t>(left) + 1) * d);
  for (std::size_t t = 0; t < t_out; ++t) {
    const std::ptrdiff_t anchor = static_cast<std::ptrdiff_t>(t) * factor;
    for (int j = 0; j <= left; ++j) {
      std::ptrdiff_t src = anchor - left + j;
      if (src < 0) src = 0;
      auto src_row = f.frames.row(static_cast<std::size_t>(src));
      float* dst = out.frames.row(t).data() + static_cast<std::size_t>(j) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] = src_row[c];
    }
  }
  return out;
}

}  // namespace mskseq

// mskseq/io.hpp
//
// Binary feature files ("MSKF"), 16-bit PCM WAV reading, and small
// byte-level helpers. All multi-byte fields are little-endian.
//
// Feature file layout:
//   bytes 0..3   magic "MSKF"
//   u32          version (currently 1)
//   u32          T       (frame count)
//   u32          d       (feature dimension)
//   f32          frame_rate (Hz)
//   T*d f32      row-major frame data
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"
#include "mskseq/matrix.hpp"

namespace mskseq {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& what)
      : bytes_(bytes), what_(what) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw DataError(what_ + ": truncated (need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_) + ")");
  }

  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write: " + path);
}

// ---------------------------------------------------------------- features

// T x d acoustic feature sequence with frame-rate metadata.
struct FeatureMatrix {
  Matrix<float> frames;
  float frame_rate = 0.0f;  // Hz

  std::size_t num_frames() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline std::string encode_feature_file(const FeatureMatrix& f) {
  std::string out;
  out.reserve(20 + f.frames.size() * 4);
  out += "MSKF";
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(f.num_frames()));
  put_u32(out, static_cast<std::uint32_t>(f.dim()));
  put_f32(out, f.frame_rate);
  for (float v : f.frames.raw()) put_f32(out, v);
  return out;
}

inline FeatureMatrix decode_feature_file(const std::string& bytes,
                                         const std::string& what) {
  ByteReader r(bytes, what);
  if (r.str(4) != "MSKF") throw DataError(what + ": bad magic, not a feature file");
  std::uint32_t version = r.u32();
  if (version != kFeatureFileVersion)
    throw DataError(what + ": unsupported feature file version " +
                    std::to_string(version));
  std::uint32_t t = r.u32();
  std::uint32_t d = r.u32();
  FeatureMatrix f;
  f.frame_rate = r.f32();
  f.frames = Matrix<float>(t, d);
  r.raw(f.frames.data(), static_cast<std::size_t>(t) * d * 4);
  return f;
}

inline void write_feature_file(const std::string& path, const FeatureMatrix& f) {
  write_file_bytes(path, encode_feature_file(f));
}

inline FeatureMatrix read_feature_file(const std::string& path) {
  return decode_feature_file(read_file_bytes(path), path);
}

// ---------------------------------------------------------------- waveform

struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;  // Hz, > 0
};

// Minimal RIFF/WAVE reader: PCM16 or IEEE float32, first channel only.
inline Waveform read_wav_file(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  ByteReader r(bytes, path);
  if (r.str(4) != "RIFF") throw DataError(path + ": not a RIFF file");
  r.u32();  // chunk size
  if (r.str(4) != "WAVE") throw DataError(path + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  Waveform w;
  bool got_fmt = false, got_data = false;
  while (r.remaining() >= 8) {
    std::string id = r.str(4);
    std::uint32_t size = r.u32();
    if (id == "fmt ") {
      std::string fmt = r.str(size);
      if (size < 16) throw DataError(path + ": short fmt chunk");
      auto u16at = [&](std::size_t o) {
        return static_cast<std::uint16_t>(static_cast<unsigned char>(fmt[o]) |
                                          (static_cast<unsigned char>(fmt[o + 1]) << 8));
      };
      auto u32at = [&](std::size_t o) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
          v |= static_cast<std::uint32_t>(static_cast<unsigned char>(fmt[o + i])) << (8 * i);
        return v;
      };
      format = u16at(0);
      channels = u16at(2);
      sample_rate = u32at(4);
      bits = u16at(14);
      got_fmt = true;
    } else if (id == "data") {
      if (!got_fmt) throw DataError(path + ": data chunk before fmt");
      if (channels == 0) throw DataError(path + ": zero channels");
      std::string data = r.str(size);
      std::size_t bytes_per_sample = bits / 8;
      std::size_t stride = bytes_per_sample * channels;
      if (stride == 0) throw DataError(path + ": bad sample size");
      std::size_t n = data.size() / stride;
      w.samples.resize(n);
      if (format == 1 && bits == 16) {
        for (std::size_t i = 0; i < n; ++i) {
          std::int16_t s = static_cast<std::int16_t>(
              static_cast<unsigned char>(data[i * stride]) |
              (static_cast<unsigned char>(data[i * stride + 1]) << 8));
          w.samples[i] = static_cast<float>(s) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        for (std::size_t i = 0; i < n; ++i) {
          std::uint32_t bits32 = 0;
          for (int b = 0; b < 4; ++b)
            bits32 |= static_cast<std::uint32_t>(
                          static_cast<unsigned char>(data[i * stride + b]))
                      << (8 * b);
          float v;
          std::memcpy(&v, &bits32, 4);
          w.samples[i] = v;
        }
      } else {
        throw DataError(path + ": unsupported WAV encoding (need PCM16 or float32)");
      }
      got_data = true;
    } else {
      r.str(size);  // skip unknown chunk
    }
    if (size % 2 == 1 && r.remaining() > 0) r.str(1);  // chunk padding
  }
  if (!got_data) throw DataError(path + ": no data chunk");
  w.sample_rate = static_cast<int>(sample_rate);
  if (w.sample_rate <= 0) throw DataError(path + ": bad sample rate");
  return w;
}

inline void write_wav_file(const std::string& path, const Waveform& w) {
  std::string data;
  data.reserve(44 + w.samples.size() * 2);
  data += "RIFF";
  put_u32(data, static_cast<std::uint32_t>(36 + w.samples.size() * 2));
  data += "WAVEfmt ";
  put_u32(data, 16);
  data.push_back(1);  // PCM
  data.push_back(0);
  data.push_back(1);  // mono
  data.push_back(0);
  put_u32(data, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(data, static_cast<std::uint32_t>(w.sample_rate * 2));
  data.push_back(2);  // block align
  data.push_back(0);
  data.push_back(16);  // bits
  data.push_back(0);
  data += "data";
  put_u32(data, static_cast<std::uint32_t>(w.samples.size() * 2));
  for (float v : w.samples) {
    float clamped = v < -1.0f ? -1.0f : (v > 1.0f ? 1.0f : v);
    auto s = static_cast<std::int16_t>(std::lround(clamped * 32767.0f));
    data.push_back(static_cast<char>(s & 0xff));
    data.push_back(static_cast<char>((s >> 8) & 0xff));
  }
  write_file_bytes(path, data);
}

}  // namespace mskseq

// tests/test_io.cpp
//
// Feature files, WAV reading, manifests, vocab, key=value configs,
// checkpoint round-trips.
//
// Licensed under the Apache License, Version 2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "mskseq/config.hpp"
#include "mskseq/io.hpp"
#include "mskseq/manifest.hpp"
#include "mskseq/rng.hpp"
#include "mskseq/train.hpp"
#include "mskseq/vocab.hpp"

using namespace mskseq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("mskseq_io_test_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("feature file round-trip preserves every field", "[io]") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureMatrix f;
    const std::size_t t = 1 + rng.next_below(40);
    const std::size_t d = 1 + rng.next_below(24);
    f.frames = Matrix<float>(t, d);
    for (auto& v : f.frames.raw()) v = static_cast<float>(rng.next_normal());
    f.frame_rate = static_cast<float>(10.0 + rng.next_unit() * 90.0);

    const std::string bytes = encode_feature_file(f);
    const FeatureMatrix g = decode_feature_file(bytes, "mem");
    REQUIRE(g.frames == f.frames);
    REQUIRE(g.frame_rate == f.frame_rate);
  }
}

TEST_CASE("feature file header is the documented layout", "[io]") {
  FeatureMatrix f;
  f.frames = Matrix<float>(2, 3);
  f.frame_rate = 100.0f;
  const std::string bytes = encode_feature_file(f);
  REQUIRE(bytes.substr(0, 4) == "MSKF");
  ByteReader r(bytes, "mem");
  r.str(4);
  CHECK(r.u32() == 1);  // version
  CHECK(r.u32() == 2);  // T
  CHECK(r.u32() == 3);  // d
  CHECK(r.f32() == 100.0f);
  CHECK(r.remaining() == 2 * 3 * 4);
}

TEST_CASE("feature file decoding rejects bad input", "[io]") {
  CHECK_THROWS_AS(decode_feature_file("XXXX", "mem"), DataError);
  FeatureMatrix f;
  f.frames = Matrix<float>(4, 4, 1.0f);
  std::string bytes = encode_feature_file(f);
  bytes.resize(bytes.size() - 8);  // truncate data
  CHECK_THROWS_AS(decode_feature_file(bytes, "mem"), DataError);
}

TEST_CASE("wav write/read round-trips PCM16 within quantization", "[io]") {
  const auto dir = temp_dir();
  Waveform w;
  w.sample_rate = 16000;
  Rng rng(3);
  w.samples.resize(1600);
  for (auto& s : w.samples) s = static_cast<float>(rng.next_unit() * 1.6 - 0.8);
  const std::string path = (dir / "tone.wav").string();
  write_wav_file(path, w);
  const Waveform r = read_wav_file(path);
  REQUIRE(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    REQUIRE(std::abs(r.samples[i] - w.samples[i]) < 1.0f / 16384.0f);
}

TEST_CASE("manifest parses and rejects malformed rows", "[io]") {
  std::istringstream in(
      "utt1\tspkA\t/data/utt1.wav\taudio\thello world\n"
      "utt2\tspkB\t/data/utt2.mskf\tfeat\t\n"
      "utt3\tspkB\t/data/utt3.mskf\tfeat\n");
  const Manifest m = parse_manifest(in, "mem");
  REQUIRE(m.size() == 3);
  CHECK(m.records[0].source_kind == SourceKind::kAudio);
  CHECK(m.records[0].transcript == "hello world");
  CHECK(m.records[1].transcript.empty());
  CHECK(m.records[2].transcript.empty());

  std::istringstream bad_kind("utt\tspk\tp\tmystery\t\n");
  CHECK_THROWS_AS(parse_manifest(bad_kind, "mem"), DataError);
  std::istringstream too_few("utt\tspk\n");
  CHECK_THROWS_AS(parse_manifest(too_few, "mem"), DataError);
}

TEST_CASE("manifest write/read round-trip", "[io]") {
  const auto dir = temp_dir();
  Manifest m;
  m.records.push_back({"a", "s1", "x.mskf", SourceKind::kFeat, "w01 w02"});
  m.records.push_back({"b", "s2", "y.wav", SourceKind::kAudio, ""});
  const std::string path = (dir / "manifest.tsv").string();
  write_manifest(path, m);
  const Manifest r = read_manifest(path);
  REQUIRE(r.size() == 2);
  CHECK(r.records[0].transcript == "w01 w02");
  CHECK(r.records[1].source_kind == SourceKind::kAudio);
}

TEST_CASE("vocab enforces special tokens and encodes transcripts", "[io]") {
  const Vocab v = Vocab::with_specials({"hello", "world"});
  REQUIRE(v.size() == 6);
  CHECK(v.token(kPadId) == "<PAD>");
  CHECK(v.token(kEosId) == "</S>");
  CHECK(v.id_or_unk("hello") == 4);
  CHECK(v.id_or_unk("unknown") == kUnkId);
  const auto ids = v.encode("  hello   world ");
  REQUIRE(ids == std::vector<TokenId>{4, 5});
  CHECK(v.decode({kBosId, 4, 5, kEosId}) == "hello world");

  CHECK_THROWS_AS(Vocab::from_lines({"<PAD>", "<UNK>", "<S>"}, "mem"), DataError);
  CHECK_THROWS_AS(Vocab::from_lines({"<UNK>", "<PAD>", "<S>", "</S>"}, "mem"),
                  DataError);
}

TEST_CASE("key=value config parsing with comments and overrides", "[io]") {
  std::istringstream in(
      "# stage config\n"
      "stage = linguistic\n"
      "max_steps=250   # budget\n"
      "lr_scale = 0.5\n"
      "\n");
  KeyValueConfig kv = KeyValueConfig::from_stream(in, "mem");
  CHECK(kv.get_string("stage", "") == "linguistic");
  CHECK(kv.get_int("max_steps", 0) == 250);
  CHECK(kv.get_real("lr_scale", 0) == 0.5);
  CHECK(kv.get_int("absent", 7) == 7);
  kv.set("max_steps", "10");
  CHECK(kv.get_int("max_steps", 0) == 10);

  std::istringstream bad("stage linguistic\n");
  CHECK_THROWS_AS(KeyValueConfig::from_stream(bad, "mem"), DataError);
  kv.set("max_steps", "ten");
  CHECK_THROWS_AS(kv.get_int("max_steps", 0), DataError);
}

TEST_CASE("checkpoint round-trip preserves params, optimizer and metadata", "[io]") {
  Checkpoint<double> ckpt;
  Rng rng(5);
  for (const char* name : {"enc.w", "dec.w"}) {
    Matrix<double> t(3, 4);
    for (auto& v : t.raw()) v = rng.next_normal();
    ckpt.params.emplace(name, std::move(t));
  }
  ckpt.optimizer = AdamState<double>::zeros_like(ckpt.params);
  ckpt.optimizer->t = 12;
  ckpt.optimizer->m.at("enc.w")(0, 0) = 0.25;
  ckpt.step = 400;
  ckpt.stage = "linguistic";
  ckpt.fingerprint = params_fingerprint(ckpt.params);

  const std::string bytes = encode_checkpoint(ckpt);
  const auto r = decode_checkpoint<double>(bytes, "mem");
  CHECK(r.step == 400);
  CHECK(r.stage == "linguistic");
  CHECK(r.fingerprint == ckpt.fingerprint);
  CHECK(r.params.at("enc.w") == ckpt.params.at("enc.w"));
  REQUIRE(r.optimizer.has_value());
  CHECK(r.optimizer->t == 12);
  CHECK(r.optimizer->m.at("enc.w")(0, 0) == 0.25);

  // dtype mismatch is rejected, not misread
  CHECK_THROWS_AS(decode_checkpoint<float>(bytes, "mem"), DataError);
}

TEST_CASE("fingerprint tracks shapes and names, not values", "[io]") {
  NamedTensors<double> a, b, c;
  a.emplace("x", Matrix<double>(2, 3, 1.0));
  b.emplace("x", Matrix<double>(2, 3, 9.0));
  c.emplace("x", Matrix<double>(3, 2, 1.0));
  CHECK(params_fingerprint(a) == params_fingerprint(b));
  CHECK(params_fingerprint(a) != params_fingerprint(c));
  NamedTensors<double> renamed;
  renamed.emplace("y", Matrix<double>(2, 3, 1.0));
  CHECK(params_fingerprint(a) != params_fingerprint(renamed));
}

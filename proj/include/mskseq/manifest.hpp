// mskseq/manifest.hpp
//
// Utterance manifests: one record per line, tab-separated:
//   id <TAB> speaker_id <TAB> source_path <TAB> source_kind <TAB> transcript
// source_kind is "audio" or "feat"; the transcript field may be empty.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mskseq/errors.hpp"

namespace mskseq {

enum class SourceKind { kAudio, kFeat };

struct UtteranceRecord {
  std::string id;
  std::string speaker_id;
  std::string source_path;
  SourceKind source_kind = SourceKind::kFeat;
  std::string transcript;
};

struct Manifest {
  std::vector<UtteranceRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

inline const char* to_string(SourceKind k) {
  return k == SourceKind::kAudio ? "audio" : "feat";
}

inline SourceKind parse_source_kind(const std::string& s, const std::string& where) {
  if (s == "audio") return SourceKind::kAudio;
  if (s == "feat") return SourceKind::kFeat;
  throw DataError(where + ": unknown source_kind '" + s + "'");
}

inline Manifest parse_manifest(std::istream& in, const std::string& what) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      if (tab == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    std::string where = what + ":" + std::to_string(lineno);
    if (fields.size() < 4 || fields.size() > 5)
      throw DataError(where + ": expected 4 or 5 tab-separated fields, got " +
                      std::to_string(fields.size()));
    UtteranceRecord rec;
    rec.id = fields[0];
    rec.speaker_id = fields[1];
    rec.source_path = fields[2];
    rec.source_kind = parse_source_kind(fields[3], where);
    if (fields.size() == 5) rec.transcript = fields[4];
    if (rec.id.empty()) throw DataError(where + ": empty utterance id");
    m.records.push_back(std::move(rec));
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  return parse_manifest(in, path);
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open manifest for writing: " + path);
  for (const auto& rec : m.records) {
    out << rec.id << '\t' << rec.speaker_id << '\t' << rec.source_path << '\t'
        << to_string(rec.source_kind) << '\t' << rec.transcript << '\n';
  }
  if (!out) throw DataError("short write: " + path);
}

}  // namespace mskseq

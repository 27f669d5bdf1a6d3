// mskseq/vocab.hpp
//
// Output-unit vocabulary. A vocab file lists one token per line, ids in
// line order. The first four entries must be the special tokens
// <PAD>, <UNK>, <S>, </S>; callers that build vocabularies get them
// prepended automatically.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mskseq/errors.hpp"

namespace mskseq {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;  // <S>
inline constexpr TokenId kEosId = 3;  // </S>
inline constexpr int kNumSpecialTokens = 4;

class Vocab {
 public:
  Vocab() = default;

  // Builds <PAD>,<UNK>,<S>,</S> followed by the given tokens.
  static Vocab with_specials(const std::vector<std::string>& tokens) {
    Vocab v;
    v.push("<PAD>");
    v.push("<UNK>");
    v.push("<S>");
    v.push("</S>");
    for (const auto& t : tokens) v.push(t);
    return v;
  }

  static Vocab from_lines(const std::vector<std::string>& lines,
                          const std::string& what) {
    static const char* expect[] = {"<PAD>", "<UNK>", "<S>", "</S>"};
    if (lines.size() < kNumSpecialTokens)
      throw DataError(what + ": vocab needs at least the 4 special tokens");
    for (int i = 0; i < kNumSpecialTokens; ++i)
      if (lines[static_cast<std::size_t>(i)] != expect[i])
        throw DataError(what + ": vocab line " + std::to_string(i + 1) +
                        " must be " + expect[i]);
    Vocab v;
    for (const auto& t : lines) v.push(t);
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw DataError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  TokenId id_or_unk(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::vector<std::string>& tokens() const { return tokens_; }

  // Whitespace-separated transcript to ids; unknown tokens map to <UNK>.
  std::vector<TokenId> encode(const std::string& transcript) const {
    std::vector<TokenId> ids;
    std::size_t i = 0;
    while (i < transcript.size()) {
      while (i < transcript.size() && std::isspace(static_cast<unsigned char>(transcript[i]))) ++i;
      std::size_t start = i;
      while (i < transcript.size() && !std::isspace(static_cast<unsigned char>(transcript[i]))) ++i;
      if (i > start) ids.push_back(id_or_unk(transcript.substr(start, i - start)));
    }
    return ids;
  }

  std::string decode(const std::vector<TokenId>& ids,
                     const std::string& separator = " ") const {
    std::string out;
    for (TokenId id : ids) {
      if (id == kPadId || id == kBosId || id == kEosId) continue;
      if (!out.empty()) out += separator;
      out += token(id);
    }
    return out;
  }

 private:
  void push(const std::string& t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

inline Vocab read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocab: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return Vocab::from_lines(lines, path);
}

inline void write_vocab(const std::string& path, const Vocab& v) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open vocab for writing: " + path);
  for (const auto& t : v.tokens()) out << t << '\n';
  if (!out) throw DataError("short write: " + path);
}

}  // namespace mskseq

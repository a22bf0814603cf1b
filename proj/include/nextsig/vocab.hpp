// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nextsig/core.hpp"

namespace nextsig {

// Word-per-token vocabulary. Text is a whitespace-joined sequence of words.
class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kUnk = "<unk>";

  // Requires >= 4 unique words including <bos>, <eos> and <unk>.
  explicit Vocabulary(std::vector<std::string> words);

  // The 64-word vocabulary used by the persona and toy-task worlds.
  static const Vocabulary& standard();

  std::size_t size() const { return words_.size(); }
  const std::string& word(TokenId id) const;
  std::optional<TokenId> find(std::string_view word) const;
  TokenId id(std::string_view word) const;  // throws unknown_word

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId unk() const { return unk_; }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < words_.size(); }

  // Throws unknown_word on any word outside the vocabulary.
  std::vector<TokenId> encode(std::string_view text) const;
  // Maps unknown words to <unk>; used for free-form conversation text.
  std::vector<TokenId> encode_lenient(std::string_view text) const;
  // Joins words with single spaces; <bos>/<eos> are not rendered.
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = 0;
  TokenId eos_ = 0;
  TokenId unk_ = 0;
};

// <bos>, then per message its role marker (<system>/<user>/<assistant>/<tool>
// when present in the vocabulary) followed by the leniently encoded content.
std::vector<TokenId> render_prompt(const Vocabulary& vocab, std::span<const Message> messages);

// render_prompt plus the <assistant> marker the response is generated after.
std::vector<TokenId> render_generation_prompt(const Vocabulary& vocab, std::span<const Message> messages);

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/vocab.hpp"

#include <cctype>

#include "nextsig/error.hpp"

namespace nextsig {

namespace {

template <class F>
void for_each_word(std::string_view text, F&& f) {
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) f(text.substr(i, j - i));
    i = j;
  }
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 4) throw Error(Errc::invalid_argument, "vocabulary needs at least 4 words");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    const std::string& w = words_[i];
    if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos) {
      throw Error(Errc::invalid_argument, "vocabulary word must be non-empty and contain no whitespace");
    }
    if (!index_.emplace(w, static_cast<TokenId>(i)).second) {
      throw Error(Errc::invalid_argument, "duplicate vocabulary word '" + w + "'");
    }
  }
  auto reserved = [&](std::string_view w) {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) throw Error(Errc::invalid_argument, "vocabulary lacks " + std::string(w));
    return it->second;
  };
  bos_ = reserved(kBos);
  eos_ = reserved(kEos);
  unk_ = reserved(kUnk);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab(std::vector<std::string>{
      // reserved and role markers
      "<bos>", "<eos>", "<unk>", "<system>", "<user>", "<assistant>", "<tool>",
      // digits
      "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
      // structured, assistant-sounding style
      "**", "bold", "step", "1.", "2.", "#", "answer:", "therefore",
      // casual style
      "so", "yeah", "basically", "i", "think", "its", "the", "answer", "is", "just",
      // homework prompts
      "what", "plus", "times", "minus", "please", "solve", "task",
      // reactions and instructions
      "ok", "thanks", "good", "hmm", "no", "dont", "use", "or", "stars", "steps", "keep", "it", "casual",
      "short", "too", "long", "ai",
      // grading vocabulary
      "great", "nice", "you", "well",
      // environment feedback
      "error",
  });
  return vocab;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (!contains(id)) throw Error(Errc::token_out_of_range, "token id " + std::to_string(id));
  return words_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto found = find(word);
  if (!found) throw Error(Errc::unknown_word, "'" + std::string(word) + "' is not in the vocabulary");
  return *found;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  for_each_word(text, [&](std::string_view w) { out.push_back(id(w)); });
  return out;
}

std::vector<TokenId> Vocabulary::encode_lenient(std::string_view text) const {
  std::vector<TokenId> out;
  for_each_word(text, [&](std::string_view w) { out.push_back(find(w).value_or(unk_)); });
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (t == bos_ || t == eos_) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(t);
  }
  return out;
}

std::vector<TokenId> render_prompt(const Vocabulary& vocab, std::span<const Message> messages) {
  std::vector<TokenId> out{vocab.bos()};
  for (const Message& m : messages) {
    if (auto marker = vocab.find(std::string("<") + to_string(m.role) + ">")) out.push_back(*marker);
    auto body = vocab.encode_lenient(m.content);
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

std::vector<TokenId> render_generation_prompt(const Vocabulary& vocab, std::span<const Message> messages) {
  auto out = render_prompt(vocab, messages);
  if (auto marker = vocab.find("<assistant>")) out.push_back(*marker);
  return out;
}

}  // namespace nextsig

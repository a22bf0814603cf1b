// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nextsig/core.hpp"
#include "nextsig/rng.hpp"

namespace nextsig {

enum class JudgeMode { binary, opd };

const char* to_string(JudgeMode mode);

struct JudgeVerdict {
  int score = 0;  // {+1, -1, 0} in binary mode, {+1, -1} in opd mode
  std::optional<std::string> hint;
  std::string raw_text;
};

// Score = the last \boxed{...} integer. In opd mode the hint is the text
// between the first [HINT_START] and the next [HINT_END], kept only for +1.
// Binary mode never throws (unparseable -> 0); opd mode throws
// malformed_verdict when no valid score is found.
JudgeVerdict parse_verdict(std::string_view raw, JudgeMode mode);

// Value with the strictly greatest count; any tie for the maximum gives 0.
int majority_vote(std::span<const int> votes);

// Longest hint among +1 verdicts whose hint is longer than min_len characters
// (UTF-8 code points). nullopt means the sample should be dropped.
std::optional<std::string> select_hint(std::span<const JudgeVerdict> verdicts, std::size_t min_len = 10);

std::size_t utf8_length(std::string_view s);

struct JudgeRequest {
  std::vector<Message> context;  // the request that produced the action
  std::string action_text;
  std::vector<TokenId> action_tokens;
  std::string next_state;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;

  // Raw judge text for one independent vote.
  virtual std::string query(const JudgeRequest& request, JudgeMode mode, std::uint64_t vote_seed) = 0;

  // Whether judge_turn should fan the m votes out concurrently.
  virtual bool prefers_parallel() const { return false; }
};

using ScriptedRule = std::function<std::string(const JudgeRequest&, JudgeMode, CounterRng&)>;

class RuleSetRegistry {
 public:
  void add(std::string id, ScriptedRule rule);
  bool contains(std::string_view id) const;
  // Throws unknown_rule_set.
  const ScriptedRule& get(std::string_view id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, ScriptedRule, std::less<>> rules_;
};

// Binary-mode keyword rule: any positive keyword -> +1, else any negative
// keyword -> -1, else a prior-driven estimate (+1 / -1 / 0 with the given
// probabilities). In opd mode it never reveals a hint.
struct KeywordRuleSpec {
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  double unclear_positive = 0.0;
  double unclear_negative = 0.0;
};

ScriptedRule make_keyword_rule(KeywordRuleSpec spec);

std::string format_verdict(int score, std::optional<std::string_view> hint = std::nullopt);

class ScriptedJudge final : public JudgeBackend {
 public:
  // Throws unknown_rule_set when `rule_set_id` is not registered.
  ScriptedJudge(const RuleSetRegistry& registry, std::string rule_set_id);

  std::string query(const JudgeRequest& request, JudgeMode mode, std::uint64_t vote_seed) override;
  const std::string& rule_set_id() const { return id_; }

 private:
  std::string id_;
  ScriptedRule rule_;
};

struct ExternalJudgeConfig {
  std::string url;  // e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string api_key;
  std::string binary_template = "personal_binary";
  std::string opd_template = "personal_opd";
  std::string model = "prm";
  double temperature = 0.6;
  int max_tokens_binary = 4096;
  int max_tokens_opd = 8192;
  int max_attempts = 3;
  std::chrono::milliseconds timeout{5000};
  std::chrono::milliseconds backoff{50};
};

// System prompts for chat-style judges. Known ids: personal_binary,
// personal_opd, step_binary. Throws not_found.
const std::string& prompt_template(std::string_view id);

// Chat-completion body for one vote.
std::string build_judge_body(const ExternalJudgeConfig& config, const JudgeRequest& request, JudgeMode mode);

// Text of a chat-completion response (choices[0].message.content,
// choices[0].text or a top-level "text"). Throws parse_error.
std::string extract_completion_text(std::string_view body);

class ExternalJudge final : public JudgeBackend {
 public:
  explicit ExternalJudge(ExternalJudgeConfig config);

  // Throws backend_unavailable after max_attempts failures.
  std::string query(const JudgeRequest& request, JudgeMode mode, std::uint64_t vote_seed) override;
  bool prefers_parallel() const override { return true; }

 private:
  ExternalJudgeConfig config_;
  std::string base_;
  std::string path_;
};

// m independent votes; malformed opd votes are dropped, so opd results may
// hold fewer than m verdicts. Propagates backend_unavailable.
std::vector<JudgeVerdict> judge_turn(const JudgeRequest& request, int m, JudgeBackend& backend, JudgeMode mode,
                                     std::uint64_t seed);

}  // namespace nextsig

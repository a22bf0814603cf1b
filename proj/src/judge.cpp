// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/judge.hpp"

#include <httplib.h>

#include <algorithm>
#include <charconv>
#include <future>
#include <nlohmann/json.hpp>
#include <thread>

#include "nextsig/error.hpp"

namespace nextsig {

using nlohmann::json;

const char* to_string(JudgeMode mode) { return mode == JudgeMode::binary ? "binary" : "opd"; }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<int> parse_score(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

// Content of the last \boxed{...}, if any.
std::optional<std::string_view> last_boxed(std::string_view raw) {
  static constexpr std::string_view kOpen = "\\boxed{";
  const auto pos = raw.rfind(kOpen);
  if (pos == std::string_view::npos) return std::nullopt;
  const auto begin = pos + kOpen.size();
  const auto end = raw.find('}', begin);
  if (end == std::string_view::npos) return std::nullopt;
  return raw.substr(begin, end - begin);
}

std::optional<std::string> extract_hint(std::string_view raw) {
  static constexpr std::string_view kStart = "[HINT_START]";
  static constexpr std::string_view kEnd = "[HINT_END]";
  const auto s = raw.find(kStart);
  if (s == std::string_view::npos) return std::nullopt;
  const auto begin = s + kStart.size();
  const auto e = raw.find(kEnd, begin);
  if (e == std::string_view::npos) return std::nullopt;
  return std::string(trim(raw.substr(begin, e - begin)));
}

}  // namespace

JudgeVerdict parse_verdict(std::string_view raw, JudgeMode mode) {
  JudgeVerdict v;
  v.raw_text = std::string(raw);
  std::optional<int> score;
  if (auto boxed = last_boxed(raw)) score = parse_score(*boxed);

  if (mode == JudgeMode::binary) {
    v.score = (score && (*score == 1 || *score == -1 || *score == 0)) ? *score : 0;
    return v;
  }
  if (!score || (*score != 1 && *score != -1)) {
    throw Error(Errc::malformed_verdict, "no valid \\boxed{} score in opd verdict");
  }
  v.score = *score;
  if (v.score == 1) v.hint = extract_hint(raw);
  return v;
}

int majority_vote(std::span<const int> votes) {
  if (votes.empty()) throw Error(Errc::invalid_argument, "majority vote over zero votes");
  int counts[3] = {0, 0, 0};  // -1, 0, +1
  for (int v : votes) {
    if (v < -1 || v > 1) throw Error(Errc::invalid_argument, "vote " + std::to_string(v) + " not in {-1,0,1}");
    ++counts[v + 1];
  }
  const int best = *std::max_element(std::begin(counts), std::end(counts));
  int winner = 0;
  int holders = 0;
  for (int i = 0; i < 3; ++i) {
    if (counts[i] == best) {
      ++holders;
      winner = i - 1;
    }
  }
  return holders == 1 ? winner : 0;
}

std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::optional<std::string> select_hint(std::span<const JudgeVerdict> verdicts, std::size_t min_len) {
  const std::string* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& v : verdicts) {
    if (v.score != 1 || !v.hint) continue;
    const std::size_t len = utf8_length(*v.hint);
    if (len > min_len && (best == nullptr || len > best_len)) {
      best = &*v.hint;
      best_len = len;
    }
  }
  if (best == nullptr) return std::nullopt;
  return *best;
}

void RuleSetRegistry::add(std::string id, ScriptedRule rule) { rules_[std::move(id)] = std::move(rule); }

bool RuleSetRegistry::contains(std::string_view id) const { return rules_.find(id) != rules_.end(); }

const ScriptedRule& RuleSetRegistry::get(std::string_view id) const {
  auto it = rules_.find(id);
  if (it == rules_.end()) throw Error(Errc::unknown_rule_set, "no scripted rule set '" + std::string(id) + "'");
  return it->second;
}

std::vector<std::string> RuleSetRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : rules_) out.push_back(id);
  return out;
}

std::string format_verdict(int score, std::optional<std::string_view> hint) {
  std::string out = "\\boxed{" + std::to_string(score) + "}";
  if (hint) out += " [HINT_START]" + std::string(*hint) + "[HINT_END]";
  return out;
}

ScriptedRule make_keyword_rule(KeywordRuleSpec spec) {
  return [spec = std::move(spec)](const JudgeRequest& req, JudgeMode mode, CounterRng& rng) -> std::string {
    if (mode == JudgeMode::opd) return format_verdict(-1);
    auto has_any = [&](const std::vector<std::string>& words) {
      return std::any_of(words.begin(), words.end(),
                         [&](const std::string& w) { return req.next_state.find(w) != std::string::npos; });
    };
    if (has_any(spec.positive)) return "reply is approving " + format_verdict(1);
    if (has_any(spec.negative)) return "reply is critical " + format_verdict(-1);
    const double u = rng.uniform();
    if (u < spec.unclear_positive) return "no clear reaction, estimating " + format_verdict(1);
    if (u < spec.unclear_positive + spec.unclear_negative) return "no clear reaction, estimating " + format_verdict(-1);
    return "no clear reaction " + format_verdict(0);
  };
}

ScriptedJudge::ScriptedJudge(const RuleSetRegistry& registry, std::string rule_set_id)
    : id_(std::move(rule_set_id)), rule_(registry.get(id_)) {}

std::string ScriptedJudge::query(const JudgeRequest& request, JudgeMode mode, std::uint64_t vote_seed) {
  CounterRng rng(vote_seed);
  return rule_(request, mode, rng);
}

const std::string& prompt_template(std::string_view id) {
  static const std::map<std::string, std::string, std::less<>> kTemplates = {
      {"personal_binary",
       "You are a process reward model (PRM) evaluating an AI assistant.\n"
       "You will see the assistant's output and the subsequent user reply.\n"
       "Judge the quality of the assistant's output based on the feedback.\n"
       "Think step-by-step, then give your final score inside \\boxed{}.\n"
       "Valid scores: \\boxed{1} (good), \\boxed{-1} (bad), \\boxed{0} (neutral)."},
      {"personal_opd",
       "You are a process reward model used for hindsight hint extraction.\n"
       "Decide whether the next state reveals useful hindsight that could have\n"
       "improved the assistant response at turn t.\n"
       "- Output \\boxed{1} if yes; provide a hint in [HINT_START]...[HINT_END].\n"
       "- Output \\boxed{-1} if no; do not provide a hint.\n"
       "- Hint must be concrete and actionable (1-3 sentences)."},
      {"step_binary",
       "You evaluate one step of an agent working on a task.\n"
       "You get the task context, the agent's step and the environment feedback that followed it.\n"
       "Score +1 when the feedback shows the step succeeded and moved the task forward, -1 otherwise.\n"
       "Reason briefly, then put the final score in \\boxed{}."},
  };
  auto it = kTemplates.find(id);
  if (it == kTemplates.end()) throw Error(Errc::not_found, "no prompt template '" + std::string(id) + "'");
  return it->second;
}

std::string build_judge_body(const ExternalJudgeConfig& config, const JudgeRequest& request, JudgeMode mode) {
  std::string user = "[context]\n";
  for (const Message& m : request.context) {
    user += to_string(m.role);
    user += ": ";
    user += m.content;
    user += '\n';
  }
  user += "[assistant output]\n" + request.action_text + "\n[next state]\n" + request.next_state + "\n";

  const std::string& system =
      prompt_template(mode == JudgeMode::binary ? config.binary_template : config.opd_template);
  json body = {
      {"model", config.model},
      {"temperature", config.temperature},
      {"max_tokens", mode == JudgeMode::binary ? config.max_tokens_binary : config.max_tokens_opd},
      {"messages", json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}})},
  };
  return body.dump();
}

std::string extract_completion_text(std::string_view body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::parse_error, "judge response is not a JSON object");
  if (j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()) {
    const json& c = j["choices"][0];
    if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string()) {
      return c["message"]["content"].get<std::string>();
    }
    if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
  }
  if (j.contains("text") && j["text"].is_string()) return j["text"].get<std::string>();
  throw Error(Errc::parse_error, "judge response has no text field");
}

ExternalJudge::ExternalJudge(ExternalJudgeConfig config) : config_(std::move(config)) {
  const auto scheme = config_.url.find("://");
  if (scheme == std::string::npos) throw Error(Errc::invalid_argument, "judge url needs a scheme: " + config_.url);
  const auto slash = config_.url.find('/', scheme + 3);
  base_ = config_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/v1/chat/completions" : config_.url.substr(slash);
  // Validates the template ids up front.
  prompt_template(config_.binary_template);
  prompt_template(config_.opd_template);
}

std::string ExternalJudge::query(const JudgeRequest& request, JudgeMode mode, std::uint64_t) {
  const std::string body = build_judge_body(config_, request, mode);
  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_bearer_token_auth(config_.api_key);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(config_.backoff * attempt);
    auto res = client.Post(path_, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      return extract_completion_text(res->body);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw Error(Errc::backend_unavailable, "judge at " + config_.url + " failed: " + last_error);
}

std::vector<JudgeVerdict> judge_turn(const JudgeRequest& request, int m, JudgeBackend& backend, JudgeMode mode,
                                     std::uint64_t seed) {
  if (m < 1) throw Error(Errc::invalid_argument, "need at least one vote");
  if (request.next_state.empty()) throw Error(Errc::invalid_argument, "judging needs a next state");

  std::vector<std::string> raws(static_cast<std::size_t>(m));
  auto vote_seed = [&](int i) { return mix64(seed ^ mix64(static_cast<std::uint64_t>(i) + 1)); };
  if (backend.prefers_parallel() && m > 1) {
    std::vector<std::future<std::string>> futures;
    futures.reserve(raws.size());
    for (int i = 0; i < m; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] { return backend.query(request, mode, vote_seed(i)); }));
    }
    for (int i = 0; i < m; ++i) raws[static_cast<std::size_t>(i)] = futures[static_cast<std::size_t>(i)].get();
  } else {
    for (int i = 0; i < m; ++i) raws[static_cast<std::size_t>(i)] = backend.query(request, mode, vote_seed(i));
  }

  std::vector<JudgeVerdict> verdicts;
  verdicts.reserve(raws.size());
  for (const auto& raw : raws) {
    if (mode == JudgeMode::binary) {
      verdicts.push_back(parse_verdict(raw, mode));
      continue;
    }
    try {
      verdicts.push_back(parse_verdict(raw, mode));
    } catch (const Error& e) {
      if (e.code() != Errc::malformed_verdict) throw;
    }
  }
  return verdicts;
}

}  // namespace nextsig

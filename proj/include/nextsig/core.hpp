// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nextsig {

using TokenId = std::int32_t;
using Clock = std::chrono::steady_clock;

enum class Role { system, user, assistant, tool };

const char* to_string(Role role);
Role role_from_string(std::string_view s);

struct Message {
  Role role = Role::user;
  std::string content;

  bool operator==(const Message&) const = default;
};

// Throws bad_request when content is empty for a non-tool role.
void validate(const Message& m);

enum class TurnKind { main_line, side };

const char* to_string(TurnKind kind);

struct Turn {
  int index = 0;
  TurnKind kind = TurnKind::main_line;
  std::vector<Message> request;
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> response_tokens;
  std::string response_text;
  std::vector<double> old_log_probs;  // nats, one per response token
  std::optional<std::string> next_state;
  std::uint64_t policy_version = 0;
};

struct Session {
  std::string id;
  std::string api_key_hash;
  std::vector<Turn> turns;       // main-line only, indices 0..n-1
  std::vector<Turn> side_turns;  // kept for replay, never trained on
  Clock::time_point created_at{};
  Clock::time_point last_active{};
  bool closed = false;
};

enum class SampleSource { binary, opd, combined, stepwise };

const char* to_string(SampleSource s);
SampleSource sample_source_from_string(std::string_view s);

struct Sample {
  std::string session_id;
  int turn_index = 0;
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> response_tokens;
  std::vector<double> old_log_probs;
  std::vector<double> advantage;
  std::uint64_t policy_version = 0;
  SampleSource source = SampleSource::binary;

  bool effective() const;
};

// Throws invalid_argument unless advantage/old_log_probs/response lengths agree
// and every advantage is finite.
void validate(const Sample& s);

struct LinkResult {
  int turn_index = 0;
  std::string next_state;
};

// Attaches the reaction carried by `incoming` to the most recent main-line
// turn still awaiting one. Throws no_pending_turn when nothing is waiting and
// no_reaction when `incoming` has no user/tool message after the response.
LinkResult link_next_state(Session& session, std::span<const Message> incoming);

// Extracts the reaction text without mutating anything.
std::string extract_reaction(const Turn& pending, std::span<const Message> incoming);

// Case-insensitive header map, as delivered by the HTTP layer.
using HeaderMap = std::map<std::string, std::string>;

TurnKind classify_turn(const HeaderMap& headers, std::span<const Message> request);

std::string sha256_hex(std::string_view data);

// Session id when the client supplies none: digest of the key and the first
// system message.
std::string derive_session_id(std::string_view api_key, std::span<const Message> messages);

// Shared session map with per-session exclusion. Handles keep the session
// locked for their lifetime.
class SessionStore {
 public:
  class Handle {
   public:
    Session& operator*() const { return *session_; }
    Session* operator->() const { return session_; }
    bool created() const { return created_; }

   private:
    friend class SessionStore;
    std::shared_ptr<void> slot_;
    std::unique_lock<std::mutex> lock_;
    Session* session_ = nullptr;
    bool created_ = false;
  };

  // Creates the session when missing. Throws unauthorized when the session
  // exists under a different key.
  Handle acquire(const std::string& id, const std::string& api_key_hash, Clock::time_point now);

  // Existing session only; throws not_found.
  Handle acquire_existing(const std::string& id);

  std::optional<Session> snapshot(const std::string& id) const;
  std::vector<std::string> ids() const;
  std::size_t size() const;

  // Drops sessions idle for longer than `ttl`; returns how many.
  std::size_t evict_idle(Clock::time_point now, Clock::duration ttl);

 private:
  struct Slot {
    std::mutex mu;
    Session session;
  };

  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

}  // namespace nextsig

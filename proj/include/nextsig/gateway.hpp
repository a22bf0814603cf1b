// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nextsig/core.hpp"
#include "nextsig/error.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/queue.hpp"
#include "nextsig/recorder.hpp"
#include "nextsig/vocab.hpp"

namespace nextsig {

struct GenerationParams {
  int max_len = 12;
  double temperature = 1.0;
  std::optional<std::uint64_t> seed;
};

struct ChatRequest {
  std::vector<Message> messages;
  std::optional<std::string> session_id;
  std::optional<std::string> turn_kind_hint;  // "main" or "side"
  std::string api_key;
  GenerationParams generation;
};

struct ChatResponse {
  std::string response_text;
  std::string session_id;
  int turn_index = 0;  // side turns count separately
  std::uint64_t policy_version = 0;
  TurnKind kind = TurnKind::main_line;
  std::vector<TokenId> response_tokens;
};

// Ends a session. Trailing user/tool messages become the final turn's next
// state; `outcome` carries a verifier result for episodic worlds.
struct CloseRequest {
  std::string session_id;
  std::string api_key;
  std::vector<Message> messages;
  std::optional<double> outcome;
};

struct CloseResponse {
  std::string session_id;
  int turns = 0;
  bool judged_final_turn = false;
};

// A main-line turn whose next state is known.
struct JudgeJob {
  std::string session_id;
  Turn turn;
  bool final_turn = false;
  std::optional<double> outcome;
  int attempts = 0;
};

struct GatewayConfig {
  std::vector<std::string> api_keys;
  Clock::duration idle_ttl = std::chrono::hours(1);
};

struct GatewayStats {
  std::uint64_t requests = 0;
  std::uint64_t failures = 0;
  std::uint64_t judge_jobs = 0;
  std::uint64_t sessions = 0;
};

class Gateway {
 public:
  using ClockFn = std::function<Clock::time_point()>;

  Gateway(GatewayConfig config, SnapshotStore& snapshots, const Vocabulary& vocab, WorkQueue<JudgeJob>& judge_queue,
          Recorder* recorder = nullptr, ClockFn clock = [] { return Clock::now(); });

  // Throws unauthorized, bad_request, not_found.
  ChatResponse handle_chat(const ChatRequest& request);
  CloseResponse handle_close(const CloseRequest& request);

  // Publishes a snapshot exactly one version ahead, then rotates the record.
  // Generations already running finish on the snapshot they started with.
  void graceful_weight_swap(std::shared_ptr<const PolicyParams> snapshot);

  std::size_t evict_idle();

  // Runs after a request has pinned its snapshot and before sampling.
  void set_generation_hook(std::function<void(const ChatRequest&, std::uint64_t version)> hook);

  bool authorized(const std::string& api_key) const;
  std::uint64_t version() const { return snapshots_.current_version(); }
  GatewayStats stats() const;
  SessionStore& sessions() { return sessions_; }
  Recorder* recorder() const { return recorder_; }
  const Vocabulary& vocab() const { return vocab_; }
  void note_failure() { failures_.fetch_add(1); }

 private:
  std::uint64_t derive_seed(const std::string& session_id, int index, TurnKind kind) const;

  GatewayConfig config_;
  std::vector<std::string> key_hashes_;
  SnapshotStore& snapshots_;
  const Vocabulary& vocab_;
  WorkQueue<JudgeJob>& judge_queue_;
  Recorder* recorder_;
  ClockFn clock_;
  SessionStore sessions_;
  std::mutex swap_mu_;
  std::mutex hook_mu_;
  std::function<void(const ChatRequest&, std::uint64_t)> hook_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> failures_{0};
  std::atomic<std::uint64_t> judge_jobs_{0};
};

// Wire layer shared by the HTTP server and the in-process transport.
struct HttpReply {
  int status = 200;
  std::string body;
};

// Routes: POST /v1/chat, POST /v1/close, GET /healthz, GET /version,
// GET /metrics. Errors come back as {"error": {"code", "message"}}.
HttpReply dispatch(Gateway& gateway, const std::string& method, const std::string& path, const HeaderMap& headers,
                   const std::string& body);

nlohmann::json to_json(const Message& m);
Message message_from_json(const nlohmann::json& j);  // throws bad_request

int http_status(Errc code);

class GatewayServer {
 public:
  explicit GatewayServer(Gateway& gateway);
  ~GatewayServer();

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

 private:
  struct Impl;
  Gateway& gateway_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace nextsig

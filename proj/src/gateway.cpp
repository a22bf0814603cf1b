// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/gateway.hpp"

#include <algorithm>
#include <cctype>

#include "httplib.h"
#include "nextsig/error.hpp"
#include "nextsig/rng.hpp"

namespace nextsig {

using nlohmann::json;

namespace {

constexpr int kMaxGenerationLen = 256;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::optional<std::string> header(const HeaderMap& headers, std::string_view name) {
  const std::string want = lower(name);
  for (const auto& [k, v] : headers) {
    if (lower(k) == want) return v;
  }
  return std::nullopt;
}

json messages_json(const std::vector<Message>& messages) {
  json arr = json::array();
  for (const Message& m : messages) arr.push_back(to_json(m));
  return arr;
}

}  // namespace

Gateway::Gateway(GatewayConfig config, SnapshotStore& snapshots, const Vocabulary& vocab,
                 WorkQueue<JudgeJob>& judge_queue, Recorder* recorder, ClockFn clock)
    : config_(std::move(config)),
      snapshots_(snapshots),
      vocab_(vocab),
      judge_queue_(judge_queue),
      recorder_(recorder),
      clock_(std::move(clock)) {
  if (config_.api_keys.empty()) throw Error(Errc::invalid_argument, "gateway needs at least one api key");
  for (const auto& key : config_.api_keys) key_hashes_.push_back(sha256_hex(key));
}

bool Gateway::authorized(const std::string& api_key) const {
  if (api_key.empty()) return false;
  const std::string h = sha256_hex(api_key);
  return std::find(key_hashes_.begin(), key_hashes_.end(), h) != key_hashes_.end();
}

std::uint64_t Gateway::derive_seed(const std::string& session_id, int index, TurnKind kind) const {
  std::uint64_t s = stable_hash(session_id);
  s = mix64(s ^ (static_cast<std::uint64_t>(index) + 1) * 0x9e3779b97f4a7c15ULL);
  return mix64(s ^ (kind == TurnKind::side ? 0x5bd1e995ULL : 0ULL));
}

void Gateway::set_generation_hook(std::function<void(const ChatRequest&, std::uint64_t)> hook) {
  std::lock_guard lock(hook_mu_);
  hook_ = std::move(hook);
}

ChatResponse Gateway::handle_chat(const ChatRequest& request) {
  requests_.fetch_add(1);
  if (!authorized(request.api_key)) throw Error(Errc::unauthorized, "invalid api key");
  if (request.messages.empty()) throw Error(Errc::bad_request, "messages must not be empty");
  for (const Message& m : request.messages) validate(m);
  const auto& gen = request.generation;
  if (gen.max_len < 1 || gen.max_len > kMaxGenerationLen) throw Error(Errc::bad_request, "max_len out of range");
  if (!(gen.temperature > 0.0)) throw Error(Errc::bad_request, "temperature must be > 0");

  const std::string id = request.session_id.value_or(derive_session_id(request.api_key, request.messages));
  HeaderMap hints;
  if (request.turn_kind_hint) hints["x-turn-kind"] = *request.turn_kind_hint;
  const TurnKind kind = classify_turn(hints, request.messages);

  const auto now = clock_();
  auto session = sessions_.acquire(id, sha256_hex(request.api_key), now);
  if (session->closed) throw Error(Errc::bad_request, "session " + id + " is closed");
  session->last_active = now;

  if (kind == TurnKind::main_line && !session->turns.empty() && !session->turns.back().next_state) {
    LinkResult link;
    try {
      link = link_next_state(*session, request.messages);
    } catch (const Error& e) {
      if (e.code() == Errc::no_reaction) throw Error(Errc::bad_request, "main-line request carries no reaction");
      throw;
    }
    JudgeJob job{id, session->turns.back(), false, std::nullopt, 0};
    judge_queue_.push(std::move(job));
    judge_jobs_.fetch_add(1);
    if (recorder_) recorder_->record(EventKind::judge_enqueued, id, link.turn_index, {{"next_state", link.next_state}});
  }

  const auto snapshot = snapshots_.current();
  {
    std::function<void(const ChatRequest&, std::uint64_t)> hook;
    {
      std::lock_guard lock(hook_mu_);
      hook = hook_;
    }
    if (hook) hook(request, snapshot->version);
  }

  const int index = static_cast<int>(kind == TurnKind::main_line ? session->turns.size() : session->side_turns.size());
  Turn turn;
  turn.index = index;
  turn.kind = kind;
  turn.request = request.messages;
  turn.prompt_tokens = render_generation_prompt(vocab_, request.messages);
  const std::uint64_t seed = gen.seed.value_or(derive_seed(id, index, kind));
  auto result = sample(*snapshot, turn.prompt_tokens, gen.temperature, gen.max_len, seed, vocab_.eos());
  turn.response_tokens = std::move(result.tokens);
  turn.old_log_probs = std::move(result.log_probs);
  turn.response_text = vocab_.decode(turn.response_tokens);
  turn.policy_version = snapshot->version;

  if (recorder_) {
    recorder_->record(EventKind::turn, id, index,
                      {{"kind", to_string(kind)},
                       {"request", messages_json(turn.request)},
                       {"prompt_tokens", turn.prompt_tokens},
                       {"response_text", turn.response_text},
                       {"response_tokens", turn.response_tokens},
                       {"old_log_probs", turn.old_log_probs},
                       {"policy_version", turn.policy_version},
                       {"seed", seed}});
  }

  ChatResponse response{turn.response_text, id, index, turn.policy_version, kind, turn.response_tokens};
  if (kind == TurnKind::main_line) {
    session->turns.push_back(std::move(turn));
  } else {
    session->side_turns.push_back(std::move(turn));
  }
  return response;
}

CloseResponse Gateway::handle_close(const CloseRequest& request) {
  requests_.fetch_add(1);
  if (!authorized(request.api_key)) throw Error(Errc::unauthorized, "invalid api key");
  for (const Message& m : request.messages) validate(m);
  auto session = sessions_.acquire_existing(request.session_id);
  if (session->api_key_hash != sha256_hex(request.api_key)) {
    throw Error(Errc::unauthorized, "session belongs to another key");
  }
  CloseResponse out{request.session_id, static_cast<int>(session->turns.size()), false};
  if (session->closed) return out;
  session->last_active = clock_();

  if (!session->turns.empty() && !session->turns.back().next_state && !request.messages.empty()) {
    const std::string reaction = extract_reaction(session->turns.back(), request.messages);
    if (!reaction.empty()) {
      const LinkResult link = link_next_state(*session, request.messages);
      judge_queue_.push(JudgeJob{request.session_id, session->turns.back(), true, request.outcome, 0});
      judge_jobs_.fetch_add(1);
      out.judged_final_turn = true;
      if (recorder_) {
        json payload{{"next_state", link.next_state}, {"final", true}};
        if (request.outcome) payload["outcome"] = *request.outcome;
        recorder_->record(EventKind::judge_enqueued, request.session_id, link.turn_index, std::move(payload));
      }
    }
  }
  session->closed = true;
  return out;
}

void Gateway::graceful_weight_swap(std::shared_ptr<const PolicyParams> snapshot) {
  if (!snapshot) throw Error(Errc::invalid_argument, "null snapshot");
  std::lock_guard lock(swap_mu_);
  const std::uint64_t from = snapshots_.current_version();
  snapshots_.publish(snapshot);
  if (recorder_) {
    recorder_->rotate_on_version(snapshot->version);
    recorder_->record(EventKind::weight_swap, std::nullopt, std::nullopt, {{"from", from}, {"to", snapshot->version}});
  }
}

std::size_t Gateway::evict_idle() { return sessions_.evict_idle(clock_(), config_.idle_ttl); }

GatewayStats Gateway::stats() const {
  return {requests_.load(), failures_.load(), judge_jobs_.load(), static_cast<std::uint64_t>(sessions_.size())};
}

json to_json(const Message& m) { return {{"role", to_string(m.role)}, {"content", m.content}}; }

Message message_from_json(const json& j) {
  if (!j.is_object() || !j.contains("role") || !j["role"].is_string()) {
    throw Error(Errc::bad_request, "message needs a string role");
  }
  Message m;
  try {
    m.role = role_from_string(j["role"].get<std::string>());
  } catch (const Error& e) {
    throw Error(Errc::bad_request, e.what());
  }
  if (j.contains("content")) {
    if (!j["content"].is_string()) throw Error(Errc::bad_request, "message content must be a string");
    m.content = j["content"].get<std::string>();
  }
  validate(m);
  return m;
}

int http_status(Errc code) {
  switch (code) {
    case Errc::unauthorized:
      return 401;
    case Errc::bad_request:
    case Errc::parse_error:
    case Errc::invalid_argument:
    case Errc::no_reaction:
      return 400;
    case Errc::not_found:
      return 404;
    case Errc::version_skew:
      return 409;
    default:
      return 500;
  }
}

namespace {

HttpReply error_reply(int status, std::string_view code, std::string_view message) {
  json body{{"error", {{"code", code}, {"message", message}}}};
  return {status, body.dump()};
}

std::string bearer(const HeaderMap& headers) {
  auto auth = header(headers, "authorization");
  if (!auth) return {};
  constexpr std::string_view prefix = "bearer ";
  if (auth->size() > prefix.size() && lower(auth->substr(0, prefix.size())) == prefix) {
    return auth->substr(prefix.size());
  }
  return {};
}

std::vector<Message> parse_messages(const json& body, bool required) {
  std::vector<Message> out;
  if (!body.contains("messages")) {
    if (required) throw Error(Errc::bad_request, "missing messages");
    return out;
  }
  if (!body["messages"].is_array()) throw Error(Errc::bad_request, "messages must be an array");
  for (const auto& m : body["messages"]) out.push_back(message_from_json(m));
  return out;
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::bad_request, "body must be a JSON object");
  return j;
}

ChatRequest chat_request(const HeaderMap& headers, const json& body) {
  ChatRequest req;
  req.api_key = bearer(headers);
  req.messages = parse_messages(body, true);
  if (auto sid = header(headers, "x-session-id"); sid && !sid->empty()) {
    req.session_id = *sid;
  } else if (body.contains("session_id") && body["session_id"].is_string()) {
    req.session_id = body["session_id"].get<std::string>();
  }
  if (auto kind = header(headers, "x-turn-kind"); kind && !kind->empty()) req.turn_kind_hint = *kind;
  if (body.contains("generation")) {
    const json& g = body["generation"];
    if (!g.is_object()) throw Error(Errc::bad_request, "generation must be an object");
    try {
      if (g.contains("max_len")) req.generation.max_len = g["max_len"].get<int>();
      if (g.contains("temperature")) req.generation.temperature = g["temperature"].get<double>();
      if (g.contains("seed") && !g["seed"].is_null()) req.generation.seed = g["seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw Error(Errc::bad_request, e.what());
    }
  }
  return req;
}

}  // namespace

HttpReply dispatch(Gateway& gateway, const std::string& method, const std::string& path, const HeaderMap& headers,
                   const std::string& body) {
  HttpReply reply;
  try {
    if (method == "GET" && path == "/healthz") {
      reply.body = json{{"status", "ok"}}.dump();
    } else if (method == "GET" && path == "/version") {
      reply.body = json{{"version", gateway.version()}}.dump();
    } else if (method == "GET" && path == "/metrics") {
      const auto s = gateway.stats();
      json m{{"requests", s.requests}, {"failures", s.failures}, {"judge_jobs", s.judge_jobs},
             {"sessions", s.sessions}, {"policy_version", gateway.version()}};
      if (auto* rec = gateway.recorder()) {
        const auto r = rec->metrics();
        m["recorder"] = {{"queue_depth", r.queue_depth},
                         {"dropped", r.dropped},
                         {"write_failures", r.write_failures},
                         {"written", r.written},
                         {"version", r.version}};
      }
      reply.body = m.dump();
    } else if (method == "POST" && path == "/v1/chat") {
      const ChatRequest req = chat_request(headers, parse_body(body));
      const ChatResponse res = gateway.handle_chat(req);
      reply.body = json{{"response_text", res.response_text},
                        {"session_id", res.session_id},
                        {"turn_index", res.turn_index},
                        {"policy_version", res.policy_version},
                        {"turn_kind", to_string(res.kind)},
                        {"response_tokens", res.response_tokens}}
                       .dump();
    } else if (method == "POST" && path == "/v1/close") {
      const json j = parse_body(body);
      CloseRequest req;
      req.api_key = bearer(headers);
      req.messages = parse_messages(j, false);
      if (auto sid = header(headers, "x-session-id"); sid && !sid->empty()) {
        req.session_id = *sid;
      } else if (j.contains("session_id") && j["session_id"].is_string()) {
        req.session_id = j["session_id"].get<std::string>();
      } else {
        throw Error(Errc::bad_request, "close needs a session id");
      }
      if (j.contains("outcome") && j["outcome"].is_number()) req.outcome = j["outcome"].get<double>();
      const CloseResponse res = gateway.handle_close(req);
      reply.body = json{{"session_id", res.session_id},
                        {"turns", res.turns},
                        {"judged_final_turn", res.judged_final_turn}}
                       .dump();
    } else {
      reply = error_reply(404, "not_found", method + " " + path);
    }
  } catch (const Error& e) {
    reply = error_reply(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const std::exception& e) {
    reply = error_reply(500, "internal", e.what());
  }
  if (reply.status >= 400) gateway.note_failure();
  return reply;
}

struct GatewayServer::Impl {
  httplib::Server server;
};

GatewayServer::GatewayServer(Gateway& gateway) : gateway_(gateway), impl_(std::make_unique<Impl>()) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    HeaderMap headers;
    for (const auto& [k, v] : req.headers) headers[lower(k)] = v;
    const HttpReply reply = dispatch(gateway_, req.method, req.path, headers, req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  impl_->server.Get("/healthz", handler);
  impl_->server.Get("/version", handler);
  impl_->server.Get("/metrics", handler);
  impl_->server.Post("/v1/chat", handler);
  impl_->server.Post("/v1/close", handler);
}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(Errc::io_error, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void GatewayServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/client.hpp"

#include "httplib.h"
#include "nextsig/error.hpp"

namespace nextsig {

using nlohmann::json;

HttpReply InProcessTransport::send(const std::string& method, const std::string& path, const HeaderMap& headers,
                                   const std::string& body) {
  return dispatch(gateway_, method, path, headers, body);
}

struct HttpTransport::Impl {
  explicit Impl(const std::string& url) : client(url) {}
  httplib::Client client;
};

HttpTransport::HttpTransport(const std::string& base_url, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>(base_url)) {
  if (!impl_->client.is_valid()) throw Error(Errc::invalid_argument, "bad gateway url " + base_url);
  impl_->client.set_connection_timeout(timeout);
  impl_->client.set_read_timeout(timeout);
  impl_->client.set_write_timeout(timeout);
  impl_->client.set_keep_alive(true);
}

HttpTransport::~HttpTransport() = default;

HttpReply HttpTransport::send(const std::string& method, const std::string& path, const HeaderMap& headers,
                              const std::string& body) {
  httplib::Headers h(headers.begin(), headers.end());
  httplib::Result res = method == "GET" ? impl_->client.Get(path, h)
                                        : impl_->client.Post(path, h, body, "application/json");
  if (!res) throw Error(Errc::backend_unavailable, "gateway request failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

GatewayClient::GatewayClient(std::shared_ptr<Transport> transport, std::string api_key)
    : transport_(std::move(transport)), api_key_(std::move(api_key)) {}

json GatewayClient::call(const std::string& method, const std::string& path, const HeaderMap& headers,
                         const std::string& body) {
  const HttpReply reply = transport_->send(method, path, headers, body);
  json j = json::parse(reply.body, nullptr, false);
  if (reply.status >= 400) {
    if (!j.is_discarded() && j.contains("error")) {
      const auto& e = j["error"];
      throw Error(errc_from_string(e.value("code", "io_error")), e.value("message", ""));
    }
    throw Error(Errc::io_error, "gateway status " + std::to_string(reply.status));
  }
  if (j.is_discarded()) throw Error(Errc::parse_error, "gateway reply is not JSON");
  return j;
}

ChatResponse GatewayClient::chat(const std::string& session_id, const std::vector<Message>& messages,
                                 const GenerationParams& generation, const std::optional<std::string>& turn_kind) {
  HeaderMap headers{{"Authorization", "Bearer " + api_key_}};
  if (!session_id.empty()) headers["X-Session-Id"] = session_id;
  if (turn_kind) headers["X-Turn-Kind"] = *turn_kind;
  json body;
  body["messages"] = json::array();
  for (const Message& m : messages) body["messages"].push_back(to_json(m));
  body["generation"] = {{"max_len", generation.max_len}, {"temperature", generation.temperature}};
  if (generation.seed) body["generation"]["seed"] = *generation.seed;

  const json j = call("POST", "/v1/chat", headers, body.dump());
  ChatResponse out;
  try {
    out.response_text = j.at("response_text").get<std::string>();
    out.session_id = j.at("session_id").get<std::string>();
    out.turn_index = j.at("turn_index").get<int>();
    out.policy_version = j.at("policy_version").get<std::uint64_t>();
    out.kind = j.at("turn_kind").get<std::string>() == "side" ? TurnKind::side : TurnKind::main_line;
    out.response_tokens = j.at("response_tokens").get<std::vector<TokenId>>();
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  return out;
}

CloseResponse GatewayClient::close(const std::string& session_id, const std::vector<Message>& messages,
                                   std::optional<double> outcome) {
  HeaderMap headers{{"Authorization", "Bearer " + api_key_}, {"X-Session-Id", session_id}};
  json body{{"messages", json::array()}};
  for (const Message& m : messages) body["messages"].push_back(to_json(m));
  if (outcome) body["outcome"] = *outcome;
  const json j = call("POST", "/v1/close", headers, body.dump());
  return {j.value("session_id", session_id), j.value("turns", 0), j.value("judged_final_turn", false)};
}

std::uint64_t GatewayClient::version() { return call("GET", "/version", {}, "").at("version").get<std::uint64_t>(); }

json GatewayClient::metrics() { return call("GET", "/metrics", {}, ""); }

}  // namespace nextsig

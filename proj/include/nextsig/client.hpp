// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nextsig/gateway.hpp"

namespace nextsig {

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply send(const std::string& method, const std::string& path, const HeaderMap& headers,
                         const std::string& body) = 0;
};

// Calls the gateway's dispatch directly; no sockets, fully deterministic.
class InProcessTransport final : public Transport {
 public:
  explicit InProcessTransport(Gateway& gateway) : gateway_(gateway) {}
  HttpReply send(const std::string& method, const std::string& path, const HeaderMap& headers,
                 const std::string& body) override;

 private:
  Gateway& gateway_;
};

// One connection per instance; not shared between threads.
class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& base_url,
                         std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));
  ~HttpTransport() override;
  // Throws backend_unavailable when the server cannot be reached.
  HttpReply send(const std::string& method, const std::string& path, const HeaderMap& headers,
                 const std::string& body) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Speaks the gateway protocol; error replies are rethrown as Error with the
// server's code.
class GatewayClient {
 public:
  GatewayClient(std::shared_ptr<Transport> transport, std::string api_key);

  ChatResponse chat(const std::string& session_id, const std::vector<Message>& messages,
                    const GenerationParams& generation = {},
                    const std::optional<std::string>& turn_kind = std::nullopt);
  CloseResponse close(const std::string& session_id, const std::vector<Message>& messages = {},
                      std::optional<double> outcome = std::nullopt);
  std::uint64_t version();
  nlohmann::json metrics();

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const HeaderMap& headers,
                      const std::string& body);

  std::shared_ptr<Transport> transport_;
  std::string api_key_;
};

}  // namespace nextsig

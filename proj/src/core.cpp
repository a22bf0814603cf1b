// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/core.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "nextsig/error.hpp"

namespace nextsig {

const char* to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  if (s == "tool") return Role::tool;
  throw Error(Errc::bad_request, "unknown role '" + std::string(s) + "'");
}

void validate(const Message& m) {
  if (m.content.empty() && m.role != Role::tool) {
    throw Error(Errc::bad_request, std::string("empty content for role ") + to_string(m.role));
  }
}

const char* to_string(TurnKind kind) { return kind == TurnKind::main_line ? "main_line" : "side"; }

const char* to_string(SampleSource s) {
  switch (s) {
    case SampleSource::binary: return "binary";
    case SampleSource::opd: return "opd";
    case SampleSource::combined: return "combined";
    case SampleSource::stepwise: return "stepwise";
  }
  return "binary";
}

SampleSource sample_source_from_string(std::string_view s) {
  if (s == "binary") return SampleSource::binary;
  if (s == "opd") return SampleSource::opd;
  if (s == "combined") return SampleSource::combined;
  if (s == "stepwise") return SampleSource::stepwise;
  throw Error(Errc::parse_error, "unknown sample source '" + std::string(s) + "'");
}

bool Sample::effective() const {
  return std::any_of(advantage.begin(), advantage.end(), [](double a) { return a != 0.0; });
}

void validate(const Sample& s) {
  if (s.advantage.size() != s.response_tokens.size() || s.old_log_probs.size() != s.response_tokens.size()) {
    throw Error(Errc::length_mismatch, "sample lengths disagree for " + s.session_id + "#" +
                                            std::to_string(s.turn_index));
  }
  for (double a : s.advantage) {
    if (!std::isfinite(a)) throw Error(Errc::invalid_argument, "non-finite advantage");
  }
}

std::string extract_reaction(const Turn& pending, std::span<const Message> incoming) {
  // Everything after the echoed response; without an echo, the trailing run
  // of user/tool messages is the reaction.
  std::size_t start = incoming.size();
  bool echoed = false;
  for (std::size_t i = incoming.size(); i-- > 0;) {
    const Message& m = incoming[i];
    if (m.role == Role::assistant) {
      if (m.content == pending.response_text) {
        start = i + 1;
        echoed = true;
      }
      break;
    }
  }
  if (!echoed) {
    start = incoming.size();
    while (start > 0 && (incoming[start - 1].role == Role::user || incoming[start - 1].role == Role::tool)) {
      --start;
    }
  }

  std::string out;
  for (std::size_t i = start; i < incoming.size(); ++i) {
    const Message& m = incoming[i];
    if (m.role != Role::user && m.role != Role::tool) continue;
    if (!out.empty()) out += '\n';
    out += m.content;
  }
  return out;
}

LinkResult link_next_state(Session& session, std::span<const Message> incoming) {
  if (session.turns.empty() || session.turns.back().next_state.has_value()) {
    throw Error(Errc::no_pending_turn, "session " + session.id + " has no turn awaiting a next state");
  }
  Turn& pending = session.turns.back();
  std::string reaction = extract_reaction(pending, incoming);
  if (reaction.empty()) {
    throw Error(Errc::no_reaction, "request carries no reaction to turn " + std::to_string(pending.index));
  }
  pending.next_state = reaction;
  return LinkResult{pending.index, std::move(reaction)};
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

TurnKind classify_turn(const HeaderMap& headers, std::span<const Message> request) {
  for (const auto& [key, value] : headers) {
    const std::string k = lower(key);
    if (k != "x-turn-kind" && k != "turn-kind") continue;
    const std::string v = lower(value);
    if (v == "main") return TurnKind::main_line;
    if (v == "side") return TurnKind::side;
  }
  if (request.empty()) return TurnKind::side;
  const Role last = request.back().role;
  return (last == Role::user || last == Role::tool) ? TurnKind::main_line : TurnKind::side;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string derive_session_id(std::string_view api_key, std::span<const Message> messages) {
  std::string material(api_key);
  material.push_back('\0');
  for (const Message& m : messages) {
    if (m.role == Role::system) {
      material += m.content;
      break;
    }
  }
  return "s-" + sha256_hex(material).substr(0, 16);
}

SessionStore::Handle SessionStore::acquire(const std::string& id, const std::string& api_key_hash,
                                           Clock::time_point now) {
  std::shared_ptr<Slot> slot;
  bool created = false;
  {
    std::lock_guard lock(mu_);
    auto& entry = slots_[id];
    if (!entry) {
      entry = std::make_shared<Slot>();
      entry->session.id = id;
      entry->session.api_key_hash = api_key_hash;
      entry->session.created_at = now;
      created = true;
    }
    slot = entry;
  }
  Handle h;
  h.lock_ = std::unique_lock(slot->mu);
  if (slot->session.api_key_hash != api_key_hash) {
    throw Error(Errc::unauthorized, "session " + id + " belongs to another key");
  }
  slot->session.last_active = now;
  h.session_ = &slot->session;
  h.created_ = created;
  h.slot_ = std::move(slot);
  return h;
}

SessionStore::Handle SessionStore::acquire_existing(const std::string& id) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) throw Error(Errc::not_found, "unknown session " + id);
    slot = it->second;
  }
  Handle h;
  h.lock_ = std::unique_lock(slot->mu);
  h.session_ = &slot->session;
  h.slot_ = std::move(slot);
  return h;
}

std::optional<Session> SessionStore::snapshot(const std::string& id) const {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) return std::nullopt;
    slot = it->second;
  }
  std::lock_guard lock(slot->mu);
  return slot->session;
}

std::vector<std::string> SessionStore::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  out.reserve(slots_.size());
  for (const auto& [id, _] : slots_) out.push_back(id);
  return out;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return slots_.size();
}

std::size_t SessionStore::evict_idle(Clock::time_point now, Clock::duration ttl) {
  std::lock_guard lock(mu_);
  std::size_t evicted = 0;
  for (auto it = slots_.begin(); it != slots_.end();) {
    std::unique_lock slot_lock(it->second->mu, std::try_to_lock);
    // A session in use is active by definition.
    if (slot_lock.owns_lock() && now - it->second->session.last_active > ttl) {
      slot_lock.unlock();
      it = slots_.erase(it);
      ++evicted;
    } else {
      ++it;
    }
  }
  return evicted;
}

}  // namespace nextsig

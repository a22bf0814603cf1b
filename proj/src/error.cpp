// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/error.hpp"

namespace nextsig {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::no_pending_turn: return "no_pending_turn";
    case Errc::no_reaction: return "no_reaction";
    case Errc::token_out_of_range: return "token_out_of_range";
    case Errc::unknown_word: return "unknown_word";
    case Errc::malformed_verdict: return "malformed_verdict";
    case Errc::backend_unavailable: return "backend_unavailable";
    case Errc::unknown_rule_set: return "unknown_rule_set";
    case Errc::length_mismatch: return "length_mismatch";
    case Errc::no_user_message: return "no_user_message";
    case Errc::too_few_rollouts: return "too_few_rollouts";
    case Errc::empty_batch: return "empty_batch";
    case Errc::unauthorized: return "unauthorized";
    case Errc::bad_request: return "bad_request";
    case Errc::not_found: return "not_found";
    case Errc::version_skew: return "version_skew";
    case Errc::episode_finished: return "episode_finished";
    case Errc::parse_error: return "parse_error";
    case Errc::io_error: return "io_error";
  }
  return "unknown";
}

Errc errc_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::io_error); ++i) {
    const auto code = static_cast<Errc>(i);
    if (name == to_string(code)) return code;
  }
  return Errc::io_error;
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace nextsig

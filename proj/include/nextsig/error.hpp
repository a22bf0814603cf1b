// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nextsig {

enum class Errc {
  invalid_argument,
  no_pending_turn,
  no_reaction,
  token_out_of_range,
  unknown_word,
  malformed_verdict,
  backend_unavailable,
  unknown_rule_set,
  length_mismatch,
  no_user_message,
  too_few_rollouts,
  empty_batch,
  unauthorized,
  bad_request,
  not_found,
  version_skew,
  episode_finished,
  parse_error,
  io_error,
};

const char* to_string(Errc code);
// Unrecognized names map to io_error.
Errc errc_from_string(std::string_view name);

// Every failure surfaced by the library carries one of the codes above so
// callers (and the HTTP layer) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "nextsig/core.hpp"

namespace nextsig {

// k-gram log-linear categorical policy:
//   logit(next = j | c_1..c_k) = bias[j] + sum_i W_i[c_i][j]
// where c_1 is the most recent token. Positions without a predecessor (start
// of an empty context) contribute nothing for that slot.
//
// Flat layout of values(): bias[V], then W_1[V][V], ..., W_k[V][V] row-major
// with the predecessor as row. Gradients share this layout.
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(std::size_t vocab_size, std::size_t context);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t context() const { return context_; }
  std::size_t num_params() const { return values_.size(); }

  double bias(TokenId next) const { return values_[index_bias(next)]; }
  double& bias(TokenId next) { return values_[index_bias(next)]; }
  // slot 0 weighs the most recent token.
  double weight(std::size_t slot, TokenId prev, TokenId next) const { return values_[index_weight(slot, prev, next)]; }
  double& weight(std::size_t slot, TokenId prev, TokenId next) { return values_[index_weight(slot, prev, next)]; }

  std::size_t index_bias(TokenId next) const { return static_cast<std::size_t>(next); }
  std::size_t index_weight(std::size_t slot, TokenId prev, TokenId next) const {
    return vocab_size_ + (slot * vocab_size_ + static_cast<std::size_t>(prev)) * vocab_size_ +
           static_cast<std::size_t>(next);
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool all_finite() const;

  std::uint64_t version = 0;

 private:
  std::size_t vocab_size_ = 0;
  std::size_t context_ = 0;
  std::vector<double> values_;
};

using Gradient = std::vector<double>;

std::vector<double> log_softmax(std::span<const double> logits);

// Logits of the token following `history` (only its last k tokens matter).
std::vector<double> next_token_logits(const PolicyParams& params, std::span<const TokenId> history);

// log pi(response_t | context + response_<t) for every t. Throws
// token_out_of_range for ids outside [0, V) and invalid_argument for an empty
// response.
std::vector<double> log_probs_forced(const PolicyParams& params, std::span<const TokenId> context,
                                     std::span<const TokenId> response);

// Gradient of sum_t weights[t] * log pi(response_t | ...).
Gradient grad_log_probs_forced(const PolicyParams& params, std::span<const TokenId> context,
                               std::span<const TokenId> response, std::span<const double> weights);

enum class Termination { eos, max_len };

struct GenerationResult {
  std::vector<TokenId> tokens;
  std::vector<double> log_probs;  // at temperature 1
  Termination terminated_by = Termination::max_len;

  bool operator==(const GenerationResult&) const = default;
};

// Autoregressive sampling, one uniform draw from CounterRng(seed) per token,
// inverse-CDF over softmax(logits / temperature).
GenerationResult sample(const PolicyParams& params, std::span<const TokenId> context, double temperature,
                        int max_len, std::uint64_t seed, TokenId eos);

// Binary snapshot: "NSPP", u32 format, u32 V, u32 k, u64 version, then the
// flat values as little-endian doubles.
void save_snapshot(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_snapshot(const std::filesystem::path& path);

// Versioned, immutable snapshots. Readers grab the current pointer once and
// keep using it; publishing never disturbs them.
class SnapshotStore {
 public:
  explicit SnapshotStore(PolicyParams initial);

  std::shared_ptr<const PolicyParams> current() const;
  std::uint64_t current_version() const;
  // nullptr when the version was pruned or never existed.
  std::shared_ptr<const PolicyParams> at(std::uint64_t version) const;

  // Throws version_skew unless snapshot->version == current_version() + 1.
  void publish(std::shared_ptr<const PolicyParams> snapshot);
  void prune_before(std::uint64_t version);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PolicyParams> current_;
  std::map<std::uint64_t, std::shared_ptr<const PolicyParams>> history_;
};

}  // namespace nextsig

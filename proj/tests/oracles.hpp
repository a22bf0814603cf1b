// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations shared by the property tests and the
// acceptance binary. None of these call into the library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nextsig/core.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/rng.hpp"
#include "nextsig/trainer.hpp"

namespace nextsig::oracle {

inline int majority(const std::vector<int>& votes) {
  int plus = 0, minus = 0, zero = 0;
  for (int v : votes) (v > 0 ? plus : v < 0 ? minus : zero)++;
  if (plus > minus && plus > zero) return 1;
  if (minus > plus && minus > zero) return -1;
  if (zero > plus && zero > minus) return 0;
  return 0;
}

// Valid hints are those on +1 votes longer than ten characters; the longest
// wins (first on ties); no valid hint means the sample is dropped.
inline std::optional<std::string> select_hint(const std::vector<std::pair<int, std::string>>& votes) {
  std::optional<std::string> best;
  for (const auto& [score, hint] : votes) {
    if (score != 1 || hint.size() <= 10) continue;
    if (!best || hint.size() > best->size()) best = hint;
  }
  return best;
}

// Every multiset of size m over `alphabet`, as non-decreasing index sequences.
template <typename T>
std::vector<std::vector<T>> multisets(const std::vector<T>& alphabet, std::size_t m) {
  std::vector<std::vector<T>> out;
  std::vector<std::size_t> idx(m, 0);
  while (true) {
    std::vector<T> cur;
    for (auto i : idx) cur.push_back(alphabet[i]);
    out.push_back(cur);
    std::size_t k = m;
    while (k > 0 && idx[k - 1] == alphabet.size() - 1) --k;
    if (k == 0) break;
    ++idx[k - 1];
    for (std::size_t j = k; j < m; ++j) idx[j] = idx[k - 1];
  }
  return out;
}

struct GroupStats {
  std::vector<std::size_t> members;
  double mean = 0.0;
  double sd = 0.0;
};

inline GroupStats group_at(const std::vector<std::vector<double>>& rewards, std::size_t step) {
  GroupStats g;
  for (std::size_t r = 0; r < rewards.size(); ++r) {
    if (step < rewards[r].size()) g.members.push_back(r);
  }
  if (g.members.empty()) return g;
  for (auto r : g.members) g.mean += rewards[r][step];
  g.mean /= static_cast<double>(g.members.size());
  double var = 0.0;
  for (auto r : g.members) var += (rewards[r][step] - g.mean) * (rewards[r][step] - g.mean);
  g.sd = std::sqrt(var / static_cast<double>(g.members.size()));
  return g;
}

// Random ragged reward table: G rollouts of length 1..max_len, integrated
// rewards (outcome in {0,1} plus a mean of m votes) or continuous values.
inline std::vector<std::vector<double>> random_rewards(CounterRng& rng, std::size_t G, std::size_t max_len,
                                                       bool integrated) {
  std::vector<std::vector<double>> r(G);
  for (auto& row : r) {
    const std::size_t len = 1 + rng.below(max_len);
    const double outcome = rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (std::size_t t = 0; t < len; ++t) {
      if (integrated) {
        const int m = 1 + static_cast<int>(rng.below(3));
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += rng.bernoulli(0.5) ? 1.0 : -1.0;
        row.push_back(outcome + s / m);
      } else {
        row.push_back(4.0 * rng.uniform() - 2.0);
      }
    }
  }
  return r;
}

// Random training batch for gradient checks. Old log-probs are offset from
// the current policy so both PPO branches occur; offsets closer than `margin`
// to a clip boundary are pushed away so finite differences never straddle a
// kink.
inline std::vector<Sample> random_batch(const PolicyParams& params, CounterRng& rng, double eps_low, double eps_high,
                                        double margin = 2e-3) {
  const std::size_t V = params.vocab_size();
  std::vector<Sample> batch(1 + rng.below(4));
  const double lo = std::log(1.0 - eps_low), hi = std::log(1.0 + eps_high);
  int idx = 0;
  for (auto& s : batch) {
    s.session_id = "b" + std::to_string(idx++);
    const std::size_t plen = 1 + rng.below(6), rlen = 1 + rng.below(6);
    for (std::size_t i = 0; i < plen; ++i) s.prompt_tokens.push_back(static_cast<TokenId>(rng.below(V)));
    for (std::size_t i = 0; i < rlen; ++i) s.response_tokens.push_back(static_cast<TokenId>(rng.below(V)));
    const auto lp = log_probs_forced(params, s.prompt_tokens, s.response_tokens);
    const bool zero = rng.bernoulli(0.15);
    for (std::size_t t = 0; t < rlen; ++t) {
      double log_ratio = 0.8 * rng.uniform() - 0.4;
      for (double b : {lo, hi, 0.0}) {
        if (b != 0.0 && std::abs(log_ratio - b) < margin) log_ratio = b + (log_ratio < b ? -margin : margin);
      }
      s.old_log_probs.push_back(lp[t] - log_ratio);
      s.advantage.push_back(zero ? 0.0 : 2.0 * rng.uniform() - 1.0);
    }
  }
  return batch;
}

// Parameter indices a batch can influence: every bias plus the weight rows
// of each (slot, predecessor) pair seen while scoring a response. All other
// gradient entries must be exactly zero.
inline std::vector<std::size_t> touched_indices(const PolicyParams& params, const std::vector<Sample>& batch) {
  const std::size_t V = params.vocab_size(), k = params.context();
  std::vector<bool> mark(params.num_params(), false);
  for (std::size_t j = 0; j < V; ++j) mark[params.index_bias(static_cast<TokenId>(j))] = true;
  for (const auto& s : batch) {
    std::vector<TokenId> seq = s.prompt_tokens;
    for (TokenId next : s.response_tokens) {
      for (std::size_t slot = 0; slot < k && slot < seq.size(); ++slot) {
        const TokenId prev = seq[seq.size() - 1 - slot];
        for (std::size_t j = 0; j < V; ++j) mark[params.index_weight(slot, prev, static_cast<TokenId>(j))] = true;
      }
      seq.push_back(next);
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mark.size(); ++i) {
    if (mark[i]) out.push_back(i);
  }
  return out;
}

// Central differences of total_loss at the given indices.
inline std::vector<double> central_differences(const PolicyParams& params, const std::vector<Sample>& batch,
                                               const TrainerConfig& config, const std::vector<std::size_t>& indices,
                                               double h = 1e-5) {
  PolicyParams p = params;
  std::vector<double> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const double x = p.values()[i];
    p.values()[i] = x + h;
    const double up = total_loss(p, batch, config);
    p.values()[i] = x - h;
    const double down = total_loss(p, batch, config);
    p.values()[i] = x;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace nextsig::oracle

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nextsig/error.hpp"
#include "nextsig/rng.hpp"

namespace nextsig {

PolicyParams::PolicyParams(std::size_t vocab_size, std::size_t context)
    : vocab_size_(vocab_size), context_(context), values_(vocab_size + context * vocab_size * vocab_size, 0.0) {
  if (vocab_size < 4) throw Error(Errc::invalid_argument, "policy needs V >= 4");
}

bool PolicyParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
  return out;
}

namespace {

void check_tokens(const PolicyParams& params, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= params.vocab_size()) {
      throw Error(Errc::token_out_of_range,
                  "token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(params.vocab_size()));
    }
  }
}

// Fills `logits` for the token after seq[0..len).
void logits_at(const PolicyParams& params, std::span<const TokenId> seq, std::size_t len, std::vector<double>& logits) {
  const std::size_t V = params.vocab_size();
  const auto values = params.values();
  logits.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(V));
  for (std::size_t slot = 0; slot < params.context() && slot < len; ++slot) {
    const TokenId prev = seq[len - 1 - slot];
    const double* row = values.data() + params.index_weight(slot, prev, 0);
    for (std::size_t j = 0; j < V; ++j) logits[j] += row[j];
  }
}

// Concatenation view without copying the response twice.
std::vector<TokenId> concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<TokenId> seq;
  seq.reserve(a.size() + b.size());
  seq.insert(seq.end(), a.begin(), a.end());
  seq.insert(seq.end(), b.begin(), b.end());
  return seq;
}

}  // namespace

std::vector<double> next_token_logits(const PolicyParams& params, std::span<const TokenId> history) {
  check_tokens(params, history);
  std::vector<double> logits;
  logits_at(params, history, history.size(), logits);
  return logits;
}

std::vector<double> log_probs_forced(const PolicyParams& params, std::span<const TokenId> context,
                                     std::span<const TokenId> response) {
  if (response.empty()) throw Error(Errc::invalid_argument, "forced scoring needs a non-empty response");
  check_tokens(params, context);
  check_tokens(params, response);
  const auto seq = concat(context, response);
  std::vector<double> out(response.size());
  std::vector<double> logits;
  for (std::size_t t = 0; t < response.size(); ++t) {
    logits_at(params, seq, context.size() + t, logits);
    const auto lp = log_softmax(logits);
    out[t] = lp[static_cast<std::size_t>(response[t])];
  }
  return out;
}

Gradient grad_log_probs_forced(const PolicyParams& params, std::span<const TokenId> context,
                               std::span<const TokenId> response, std::span<const double> weights) {
  if (weights.size() != response.size()) {
    throw Error(Errc::length_mismatch, "weights and response lengths differ");
  }
  if (response.empty()) throw Error(Errc::invalid_argument, "forced scoring needs a non-empty response");
  check_tokens(params, context);
  check_tokens(params, response);

  const std::size_t V = params.vocab_size();
  Gradient grad(params.num_params(), 0.0);
  const auto seq = concat(context, response);
  std::vector<double> logits;
  std::vector<double> g(V);
  for (std::size_t t = 0; t < response.size(); ++t) {
    const double w = weights[t];
    if (w == 0.0) continue;
    const std::size_t len = context.size() + t;
    logits_at(params, seq, len, logits);
    const auto lp = log_softmax(logits);
    for (std::size_t j = 0; j < V; ++j) g[j] = -w * std::exp(lp[j]);
    g[static_cast<std::size_t>(response[t])] += w;

    for (std::size_t j = 0; j < V; ++j) grad[j] += g[j];
    for (std::size_t slot = 0; slot < params.context() && slot < len; ++slot) {
      double* row = grad.data() + params.index_weight(slot, seq[len - 1 - slot], 0);
      for (std::size_t j = 0; j < V; ++j) row[j] += g[j];
    }
  }
  return grad;
}

GenerationResult sample(const PolicyParams& params, std::span<const TokenId> context, double temperature,
                        int max_len, std::uint64_t seed, TokenId eos) {
  if (!(temperature > 0.0)) throw Error(Errc::invalid_argument, "temperature must be > 0");
  if (max_len < 1) throw Error(Errc::invalid_argument, "max_len must be >= 1");
  check_tokens(params, context);

  CounterRng rng(seed);
  const std::size_t V = params.vocab_size();
  std::vector<TokenId> seq(context.begin(), context.end());
  GenerationResult result;
  std::vector<double> logits;
  std::vector<double> scaled(V);

  for (int step = 0; step < max_len; ++step) {
    logits_at(params, seq, seq.size(), logits);
    const auto lp = log_softmax(logits);
    std::vector<double> probs(V);
    if (temperature == 1.0) {
      for (std::size_t j = 0; j < V; ++j) probs[j] = std::exp(lp[j]);
    } else {
      for (std::size_t j = 0; j < V; ++j) scaled[j] = logits[j] / temperature;
      const auto lq = log_softmax(scaled);
      for (std::size_t j = 0; j < V; ++j) probs[j] = std::exp(lq[j]);
    }

    const double u = rng.uniform();
    std::size_t pick = V;
    double cum = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
      cum += probs[j];
      if (u < cum) {
        pick = j;
        break;
      }
    }
    if (pick == V) {
      // Rounding left u above the final cumulative sum.
      for (std::size_t j = V; j-- > 0;) {
        if (probs[j] > 0.0) {
          pick = j;
          break;
        }
      }
    }

    const auto token = static_cast<TokenId>(pick);
    result.tokens.push_back(token);
    result.log_probs.push_back(lp[pick]);
    seq.push_back(token);
    if (token == eos) {
      result.terminated_by = Termination::eos;
      return result;
    }
  }
  result.terminated_by = Termination::max_len;
  return result;
}

namespace {

constexpr char kMagic[4] = {'N', 'S', 'P', 'P'};
constexpr std::uint32_t kFormat = 1;

template <class T>
void write_le(std::ofstream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "snapshot io assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::ifstream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(Errc::parse_error, "truncated snapshot");
  return value;
}

}  // namespace

void save_snapshot(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path.string());
  out.write(kMagic, 4);
  write_le<std::uint32_t>(out, kFormat);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.vocab_size()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.context()));
  write_le<std::uint64_t>(out, params.version);
  for (double v : params.values()) write_le<double>(out, v);
  if (!out) throw Error(Errc::io_error, "failed writing " + path.string());
}

PolicyParams load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(Errc::parse_error, "bad snapshot magic");
  if (read_le<std::uint32_t>(in) != kFormat) throw Error(Errc::parse_error, "unsupported snapshot format");
  const auto V = read_le<std::uint32_t>(in);
  const auto k = read_le<std::uint32_t>(in);
  PolicyParams params(V, k);
  params.version = read_le<std::uint64_t>(in);
  for (double& v : params.values()) v = read_le<double>(in);
  return params;
}

SnapshotStore::SnapshotStore(PolicyParams initial) {
  auto snap = std::make_shared<const PolicyParams>(std::move(initial));
  history_.emplace(snap->version, snap);
  current_ = std::move(snap);
}

std::shared_ptr<const PolicyParams> SnapshotStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

std::uint64_t SnapshotStore::current_version() const {
  std::lock_guard lock(mu_);
  return current_->version;
}

std::shared_ptr<const PolicyParams> SnapshotStore::at(std::uint64_t version) const {
  std::lock_guard lock(mu_);
  auto it = history_.find(version);
  return it == history_.end() ? nullptr : it->second;
}

void SnapshotStore::publish(std::shared_ptr<const PolicyParams> snapshot) {
  std::lock_guard lock(mu_);
  if (snapshot->version != current_->version + 1) {
    throw Error(Errc::version_skew, "cannot publish v" + std::to_string(snapshot->version) + " over v" +
                                        std::to_string(current_->version));
  }
  history_.emplace(snapshot->version, snapshot);
  current_ = std::move(snapshot);
}

void SnapshotStore::prune_before(std::uint64_t version) {
  std::lock_guard lock(mu_);
  for (auto it = history_.begin(); it != history_.end() && it->first < version;) {
    if (it->second == current_) break;
    it = history_.erase(it);
  }
}

}  // namespace nextsig

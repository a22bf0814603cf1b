// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nextsig/core.hpp"
#include "nextsig/policy.hpp"

namespace nextsig {

enum class OptimizerKind { sgd, adam };

struct TrainerConfig {
  double lr = 1e-5;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double kl_coef = 0.02;
  int batch_trigger = 16;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.1;  // decoupled, Adam only
  int max_staleness = 2;      // versions; enforced at batch assembly

  void validate() const;
};

struct PpoLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d new_log_probs
  std::size_t clipped = 0;   // tokens on the strictly-active clipped branch
  double ratio_mean = 0.0;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
};

// rho = exp(new - old); loss = -mean_t min(rho A, clip(rho, 1-eps_low, 1+eps_high) A).
// Gradient is -A rho / T on the unclipped branch (ties included) and 0 where
// the clipped branch is strictly smaller.
PpoLossResult ppo_loss(std::span<const double> new_log_probs, std::span<const double> old_log_probs,
                       std::span<const double> advantages, double eps_low, double eps_high);

struct KlResult {
  double kl = 0.0;
  std::vector<double> grad;  // d kl / d new_log_probs
};

// k3 estimator, r = exp(ref - new): kl = mean_t (r - 1 - log r).
KlResult kl_penalty(std::span<const double> new_log_probs, std::span<const double> ref_log_probs);

struct TrainReport {
  double loss_pg = 0.0;
  double loss_kl = 0.0;
  double ratio_mean = 0.0;
  double ratio_min = 0.0;
  double ratio_max = 0.0;
  double clipped_fraction = 0.0;
  std::size_t samples_used = 0;
  std::size_t stale_samples = 0;  // generated by an older version than params
  std::uint64_t new_version = 0;
};

struct LossAndGrad {
  double loss = 0.0;
  Gradient grad;
  TrainReport report;  // new_version left at 0
};

// L = mean over samples of mean over tokens of (pg + kl_coef * k3), with the
// rollout-time log-probs as both ratio denominator and KL reference.
double total_loss(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config);
LossAndGrad loss_and_grad(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config);

// Central differences of total_loss over every parameter.
Gradient finite_diff_grad(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config,
                          double h = 1e-5);

struct TrainResult {
  PolicyParams params;
  TrainReport report;
};

// Owns optimizer state across updates.
class Trainer {
 public:
  explicit Trainer(TrainerConfig config);

  // One optimizer step; the result's version is params.version + 1. Throws
  // empty_batch.
  TrainResult step(const PolicyParams& params, std::span<const Sample> batch);

  const TrainerConfig& config() const { return config_; }

 private:
  TrainerConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t t_ = 0;
};

// Stateless single update (a fresh optimizer each call).
TrainResult train_step(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config);

}  // namespace nextsig

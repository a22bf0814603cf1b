// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nextsig/error.hpp"

namespace nextsig {

void TrainerConfig::validate() const {
  if (!(lr > 0.0)) throw Error(Errc::invalid_argument, "lr must be > 0");
  if (!(eps_low > 0.0 && eps_low < 1.0)) throw Error(Errc::invalid_argument, "eps_low must lie in (0, 1)");
  if (!(eps_high > 0.0)) throw Error(Errc::invalid_argument, "eps_high must be > 0");
  if (kl_coef < 0.0) throw Error(Errc::invalid_argument, "kl_coef must be >= 0");
  if (batch_trigger < 1) throw Error(Errc::invalid_argument, "batch_trigger must be >= 1");
  if (max_staleness < 0) throw Error(Errc::invalid_argument, "max_staleness must be >= 0");
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(Errc::length_mismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " tokens");
  }
}

}  // namespace

PpoLossResult ppo_loss(std::span<const double> new_log_probs, std::span<const double> old_log_probs,
                       std::span<const double> advantages, double eps_low, double eps_high) {
  check_lengths(new_log_probs.size(), old_log_probs.size(), "ppo_loss new/old");
  check_lengths(new_log_probs.size(), advantages.size(), "ppo_loss new/advantages");
  const std::size_t T = new_log_probs.size();
  PpoLossResult out;
  out.grad.assign(T, 0.0);
  if (T == 0) return out;

  out.ratio_min = std::numeric_limits<double>::infinity();
  out.ratio_max = -std::numeric_limits<double>::infinity();
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double A = advantages[t];
    const double rho = std::exp(new_log_probs[t] - old_log_probs[t]);
    const double unclipped = rho * A;
    const double clipped = std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high) * A;
    if (clipped < unclipped) {
      out.loss -= clipped * inv_t;
      ++out.clipped;
    } else {
      out.loss -= unclipped * inv_t;
      out.grad[t] = -A * rho * inv_t;
    }
    out.ratio_mean += rho * inv_t;
    out.ratio_min = std::min(out.ratio_min, rho);
    out.ratio_max = std::max(out.ratio_max, rho);
  }
  return out;
}

KlResult kl_penalty(std::span<const double> new_log_probs, std::span<const double> ref_log_probs) {
  check_lengths(new_log_probs.size(), ref_log_probs.size(), "kl_penalty new/ref");
  const std::size_t T = new_log_probs.size();
  KlResult out;
  out.grad.assign(T, 0.0);
  if (T == 0) return out;
  const double inv_t = 1.0 / static_cast<double>(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double log_r = ref_log_probs[t] - new_log_probs[t];
    const double r = std::exp(log_r);
    out.kl += (r - 1.0 - log_r) * inv_t;
    out.grad[t] = (1.0 - r) * inv_t;
  }
  return out;
}

namespace {

struct SampleTerms {
  double pg = 0.0;
  double kl = 0.0;
  PpoLossResult ppo;
  KlResult k3;
};

SampleTerms sample_terms(const PolicyParams& params, const Sample& s, const TrainerConfig& config) {
  validate(s);
  const auto fresh = log_probs_forced(params, s.prompt_tokens, s.response_tokens);
  SampleTerms terms;
  terms.ppo = ppo_loss(fresh, s.old_log_probs, s.advantage, config.eps_low, config.eps_high);
  terms.k3 = kl_penalty(fresh, s.old_log_probs);
  terms.pg = terms.ppo.loss;
  terms.kl = terms.k3.kl;
  return terms;
}

}  // namespace

double total_loss(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config) {
  if (batch.empty()) throw Error(Errc::empty_batch, "no samples");
  double loss = 0.0;
  for (const Sample& s : batch) {
    const auto terms = sample_terms(params, s, config);
    loss += terms.pg + config.kl_coef * terms.kl;
  }
  return loss / static_cast<double>(batch.size());
}

LossAndGrad loss_and_grad(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config) {
  if (batch.empty()) throw Error(Errc::empty_batch, "no samples");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  LossAndGrad out;
  out.grad.assign(params.num_params(), 0.0);
  TrainReport& rep = out.report;
  rep.ratio_min = std::numeric_limits<double>::infinity();
  rep.ratio_max = -std::numeric_limits<double>::infinity();
  std::size_t tokens = 0;
  std::size_t clipped = 0;
  double ratio_sum = 0.0;

  std::vector<double> weights;
  for (const Sample& s : batch) {
    const auto terms = sample_terms(params, s, config);
    out.loss += (terms.pg + config.kl_coef * terms.kl) * inv_b;
    rep.loss_pg += terms.pg * inv_b;
    rep.loss_kl += terms.kl * inv_b;

    weights.resize(s.response_tokens.size());
    bool any = false;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      weights[t] = (terms.ppo.grad[t] + config.kl_coef * terms.k3.grad[t]) * inv_b;
      any = any || weights[t] != 0.0;
    }
    if (any) {
      // d loss / d theta = sum_t (d loss / d logp_t) * d logp_t / d theta
      const auto g = grad_log_probs_forced(params, s.prompt_tokens, s.response_tokens, weights);
      for (std::size_t i = 0; i < g.size(); ++i) out.grad[i] += g[i];
    }

    const std::size_t T = s.response_tokens.size();
    tokens += T;
    clipped += terms.ppo.clipped;
    ratio_sum += terms.ppo.ratio_mean * static_cast<double>(T);
    if (T > 0) {
      rep.ratio_min = std::min(rep.ratio_min, terms.ppo.ratio_min);
      rep.ratio_max = std::max(rep.ratio_max, terms.ppo.ratio_max);
    }
    if (s.policy_version < params.version) ++rep.stale_samples;
  }
  rep.samples_used = batch.size();
  if (tokens > 0) {
    rep.ratio_mean = ratio_sum / static_cast<double>(tokens);
    rep.clipped_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
  } else {
    rep.ratio_min = rep.ratio_max = rep.ratio_mean = 1.0;
  }
  return out;
}

Gradient finite_diff_grad(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config,
                          double h) {
  if (!(h > 0.0)) throw Error(Errc::invalid_argument, "finite-difference step must be > 0");
  PolicyParams probe = params;
  auto values = probe.values();
  Gradient grad(values.size(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = total_loss(probe, batch, config);
    values[i] = saved - h;
    const double down = total_loss(probe, batch, config);
    values[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Trainer::Trainer(TrainerConfig config) : config_(config) { config_.validate(); }

TrainResult Trainer::step(const PolicyParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw Error(Errc::empty_batch, "train step without samples");
  auto lg = loss_and_grad(params, batch, config_);

  TrainResult out{params, lg.report};
  auto theta = out.params.values();
  if (config_.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= config_.lr * lg.grad[i];
  } else {
    if (m_.size() != theta.size()) {
      m_.assign(theta.size(), 0.0);
      v_.assign(theta.size(), 0.0);
      t_ = 0;
    }
    ++t_;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = lg.grad[i];
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      const double step = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.adam_eps);
      theta[i] -= config_.lr * (step + config_.weight_decay * theta[i]);
    }
  }
  out.params.version = params.version + 1;
  out.report.new_version = out.params.version;
  return out;
}

TrainResult train_step(const PolicyParams& params, std::span<const Sample> batch, const TrainerConfig& config) {
  Trainer trainer(config);
  return trainer.step(params, batch);
}

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nextsig/core.hpp"

namespace nextsig {

struct AdvantageVector {
  std::vector<double> values;  // one per response token
  SampleSource source = SampleSource::binary;
};

// Marker line inserted between the original last user message and the hint.
inline constexpr std::string_view kHintMarker = "[user's hint / instruction]";

AdvantageVector binary_advantage(int r_final, std::size_t response_len);

// Copy of `messages` whose last user message gains "\n[user's hint /
// instruction]\n{hint}". Throws no_user_message / invalid_argument.
std::vector<Message> build_enhanced_context(std::span<const Message> messages, std::string_view hint);

// teacher - student per token. Throws length_mismatch.
AdvantageVector opd_advantage(std::span<const double> teacher_log_probs, std::span<const double> student_log_probs);

// w_binary * r_final + w_opd * (teacher - student) per token.
AdvantageVector combined_advantage(int r_final, std::span<const double> teacher_log_probs,
                                   std::span<const double> student_log_probs, double w_binary = 1.0,
                                   double w_opd = 1.0);

// outcome + mean(process_votes).
double integrated_step_reward(double outcome, std::span<const int> process_votes);

// Per-rollout, per-step rewards for one task; rollouts may differ in length.
struct StepRewardTable {
  std::string task_id;
  std::vector<std::vector<double>> rewards;  // rewards[g][t]

  // R[g][t] = outcome[g] + mean(votes[g][t]).
  static StepRewardTable integrated(std::string task_id, std::span<const double> outcomes,
                                    const std::vector<std::vector<std::vector<int>>>& votes);
  // R[g][t] = outcome[g] for every step of rollout g.
  static StepRewardTable outcome_only(std::string task_id, std::span<const double> outcomes,
                                      std::span<const std::size_t> lengths);
};

inline constexpr double kGroupStdEpsilon = 1e-6;

// A[g][t] = (R[g][t] - mean_t) / (std_t + eps) over the rollouts that reached
// step t (population std). Singleton and zero-variance groups get 0. Throws
// too_few_rollouts for fewer than two rollouts.
std::vector<std::vector<double>> step_index_group_advantage(const StepRewardTable& table);

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/advantage.hpp"

#include <cmath>

#include "nextsig/error.hpp"

namespace nextsig {

namespace {

void check_score(int r) {
  if (r < -1 || r > 1) throw Error(Errc::invalid_argument, "score " + std::to_string(r) + " not in {-1,0,1}");
}

void check_pair(std::span<const double> teacher, std::span<const double> student) {
  if (teacher.size() != student.size()) {
    throw Error(Errc::length_mismatch, "teacher has " + std::to_string(teacher.size()) + " tokens, student " +
                                           std::to_string(student.size()));
  }
  if (teacher.empty()) throw Error(Errc::invalid_argument, "empty response");
}

}  // namespace

AdvantageVector binary_advantage(int r_final, std::size_t response_len) {
  check_score(r_final);
  if (response_len == 0) throw Error(Errc::invalid_argument, "empty response");
  return {std::vector<double>(response_len, static_cast<double>(r_final)), SampleSource::binary};
}

std::vector<Message> build_enhanced_context(std::span<const Message> messages, std::string_view hint) {
  if (hint.empty()) throw Error(Errc::invalid_argument, "empty hint");
  std::vector<Message> out(messages.begin(), messages.end());
  for (auto it = out.rbegin(); it != out.rend(); ++it) {
    if (it->role != Role::user) continue;
    it->content += "\n";
    it->content += kHintMarker;
    it->content += "\n";
    it->content += hint;
    return out;
  }
  throw Error(Errc::no_user_message, "no user message to carry the hint");
}

AdvantageVector opd_advantage(std::span<const double> teacher_log_probs, std::span<const double> student_log_probs) {
  check_pair(teacher_log_probs, student_log_probs);
  AdvantageVector out{std::vector<double>(teacher_log_probs.size()), SampleSource::opd};
  for (std::size_t t = 0; t < out.values.size(); ++t) out.values[t] = teacher_log_probs[t] - student_log_probs[t];
  return out;
}

AdvantageVector combined_advantage(int r_final, std::span<const double> teacher_log_probs,
                                   std::span<const double> student_log_probs, double w_binary, double w_opd) {
  check_score(r_final);
  check_pair(teacher_log_probs, student_log_probs);
  AdvantageVector out{std::vector<double>(teacher_log_probs.size()), SampleSource::combined};
  for (std::size_t t = 0; t < out.values.size(); ++t) {
    out.values[t] = w_binary * r_final + w_opd * (teacher_log_probs[t] - student_log_probs[t]);
  }
  return out;
}

double integrated_step_reward(double outcome, std::span<const int> process_votes) {
  if (process_votes.empty()) throw Error(Errc::invalid_argument, "need at least one process vote");
  double sum = 0.0;
  for (int v : process_votes) sum += v;
  return outcome + sum / static_cast<double>(process_votes.size());
}

StepRewardTable StepRewardTable::integrated(std::string task_id, std::span<const double> outcomes,
                                            const std::vector<std::vector<std::vector<int>>>& votes) {
  if (outcomes.size() != votes.size()) throw Error(Errc::length_mismatch, "outcomes and vote tables differ");
  StepRewardTable table{std::move(task_id), {}};
  table.rewards.resize(outcomes.size());
  for (std::size_t g = 0; g < outcomes.size(); ++g) {
    for (const auto& step_votes : votes[g]) {
      table.rewards[g].push_back(integrated_step_reward(outcomes[g], step_votes));
    }
  }
  return table;
}

StepRewardTable StepRewardTable::outcome_only(std::string task_id, std::span<const double> outcomes,
                                              std::span<const std::size_t> lengths) {
  if (outcomes.size() != lengths.size()) throw Error(Errc::length_mismatch, "outcomes and lengths differ");
  StepRewardTable table{std::move(task_id), {}};
  for (std::size_t g = 0; g < outcomes.size(); ++g) table.rewards.emplace_back(lengths[g], outcomes[g]);
  return table;
}

std::vector<std::vector<double>> step_index_group_advantage(const StepRewardTable& table) {
  const auto& R = table.rewards;
  if (R.size() < 2) throw Error(Errc::too_few_rollouts, "step grouping needs at least two rollouts");

  std::vector<std::vector<double>> adv(R.size());
  std::size_t horizon = 0;
  for (std::size_t g = 0; g < R.size(); ++g) {
    adv[g].assign(R[g].size(), 0.0);
    horizon = std::max(horizon, R[g].size());
  }

  for (std::size_t t = 0; t < horizon; ++t) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : R) {
      if (row.size() > t) {
        sum += row[t];
        ++n;
      }
    }
    if (n < 2) continue;
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const auto& row : R) {
      if (row.size() > t) var += (row[t] - mean) * (row[t] - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    if (sd == 0.0) continue;
    for (std::size_t g = 0; g < R.size(); ++g) {
      if (R[g].size() > t) adv[g][t] = (R[g][t] - mean) / (sd + kGroupStdEpsilon);
    }
  }
  return adv;
}

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "nextsig/advantage.hpp"
#include "nextsig/error.hpp"

using namespace nextsig;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no Error thrown";
  return Errc::io_error;
}

}  // namespace

TEST(BinaryAdvantage, Broadcast) {
  EXPECT_EQ(binary_advantage(1, 3).values, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(binary_advantage(0, 5).values, (std::vector<double>(5, 0.0)));
  EXPECT_EQ(binary_advantage(-1, 1).values, (std::vector<double>{-1}));
  EXPECT_EQ(binary_advantage(1, 2).source, SampleSource::binary);
}

TEST(EnhancedContext, AppendsHintToLastUserMessage) {
  const std::vector<Message> m{{Role::user, "solve q1"}};
  const auto e = build_enhanced_context(m, "be brief");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].content, "solve q1\n[user's hint / instruction]\nbe brief");
}

TEST(EnhancedContext, OnlyFinalUserMessageChanges) {
  const std::vector<Message> m{
      {Role::system, "sys"}, {Role::user, "first"}, {Role::assistant, "reply"}, {Role::user, "again"}};
  const auto e = build_enhanced_context(m, "h is a hint");
  ASSERT_EQ(e.size(), 4u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(e[i], m[i]);
  EXPECT_EQ(e[3].content, "again\n[user's hint / instruction]\nh is a hint");
}

TEST(EnhancedContext, NoUserMessage) {
  const std::vector<Message> m{{Role::system, "sys"}};
  EXPECT_EQ(code_of([&] { build_enhanced_context(m, "h"); }), Errc::no_user_message);
}

TEST(OpdAdvantage, Difference) {
  const std::vector<double> same{-0.5, -1.5};
  EXPECT_EQ(opd_advantage(same, same).values, (std::vector<double>{0, 0}));
  const auto a = opd_advantage(std::vector<double>{-0.1, -2.0}, std::vector<double>{-1.1, -1.0});
  EXPECT_NEAR(a.values[0], 1.0, 1e-12);
  EXPECT_NEAR(a.values[1], -1.0, 1e-12);
  EXPECT_EQ(a.source, SampleSource::opd);
  EXPECT_EQ(code_of([] { opd_advantage(std::vector<double>(3), std::vector<double>(4)); }), Errc::length_mismatch);
}

TEST(CombinedAdvantage, WeightedSum) {
  const std::vector<double> t{-0.1, -2.0}, s{-1.1, -1.0};
  const auto c = combined_advantage(1, t, s);
  EXPECT_NEAR(c.values[0], 2.0, 1e-12);
  EXPECT_NEAR(c.values[1], 0.0, 1e-12);
  EXPECT_EQ(c.source, SampleSource::combined);
}

TEST(CombinedAdvantage, DegenerateWeights) {
  const std::vector<double> t{-0.3, -2.5, -0.7}, s{-1.2, -0.4, -0.7};
  for (int r : {-1, 0, 1}) {
    EXPECT_EQ(combined_advantage(r, t, s, 1.0, 0.0).values, binary_advantage(r, 3).values);
    EXPECT_EQ(combined_advantage(r, t, s, 0.0, 1.0).values, opd_advantage(t, s).values);
  }
}

TEST(IntegratedStepReward, Examples) {
  EXPECT_DOUBLE_EQ(integrated_step_reward(1, std::vector<int>{1, 1, 1}), 2.0);
  EXPECT_NEAR(integrated_step_reward(0, std::vector<int>{1, -1, -1}), -1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(integrated_step_reward(1, std::vector<int>{-1}), 0.0);
}

TEST(StepGroupAdvantage, ZeroVariance) {
  const StepRewardTable t{"t", {{2.0}, {2.0}}};
  const auto a = step_index_group_advantage(t);
  EXPECT_EQ(a[0][0], 0.0);
  EXPECT_EQ(a[1][0], 0.0);
}

TEST(StepGroupAdvantage, Symmetric) {
  const StepRewardTable t{"t", {{1.0}, {-1.0}}};
  const auto a = step_index_group_advantage(t);
  EXPECT_NEAR(a[0][0], 1.0 / (1.0 + kGroupStdEpsilon), 1e-15);
  EXPECT_NEAR(a[1][0], -1.0 / (1.0 + kGroupStdEpsilon), 1e-15);
}

TEST(StepGroupAdvantage, RaggedGroupsMatchBruteForce) {
  const StepRewardTable t{"t", {{1.0, 0.5, 2.0}, {0.0, 1.5, -1.0}, {3.0}}};
  const auto a = step_index_group_advantage(t);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[2].size(), 1u);
  // Brute force by step index.
  for (std::size_t step = 0; step < 3; ++step) {
    std::vector<std::size_t> members;
    for (std::size_t g = 0; g < t.rewards.size(); ++g) {
      if (step < t.rewards[g].size()) members.push_back(g);
    }
    double mean = 0.0;
    for (auto g : members) mean += t.rewards[g][step];
    mean /= static_cast<double>(members.size());
    double var = 0.0;
    for (auto g : members) var += (t.rewards[g][step] - mean) * (t.rewards[g][step] - mean);
    const double sd = std::sqrt(var / static_cast<double>(members.size()));
    for (auto g : members) {
      const double want = members.size() < 2 || sd == 0.0 ? 0.0 : (t.rewards[g][step] - mean) / (sd + kGroupStdEpsilon);
      EXPECT_NEAR(a[g][step], want, 1e-12) << "g=" << g << " step=" << step;
    }
  }
  EXPECT_EQ(a[0][2] + a[1][2], 0.0);
}

TEST(StepGroupAdvantage, TooFewRollouts) {
  const StepRewardTable t{"t", {{1.0}}};
  EXPECT_EQ(code_of([&] { step_index_group_advantage(t); }), Errc::too_few_rollouts);
}

TEST(StepRewardTable, Builders) {
  const std::vector<double> outcomes{1.0, 0.0};
  const std::vector<std::vector<std::vector<int>>> votes{{{1, 1, 1}, {-1, -1, 1}}, {{1, -1, -1}}};
  const auto integ = StepRewardTable::integrated("t", outcomes, votes);
  EXPECT_DOUBLE_EQ(integ.rewards[0][0], 2.0);
  EXPECT_NEAR(integ.rewards[0][1], 1.0 - 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(integ.rewards[1][0], -1.0 / 3.0, 1e-15);
  const std::vector<std::size_t> lengths{2, 1};
  const auto oo = StepRewardTable::outcome_only("t", outcomes, lengths);
  EXPECT_EQ(oo.rewards, (std::vector<std::vector<double>>{{1.0, 1.0}, {0.0}}));
}

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "nextsig/error.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/vocab.hpp"
#include "test_util.hpp"

using namespace nextsig;
using nextsig::testing::random_params;
using nextsig::testing::random_tokens;
using nextsig::testing::TempDir;

TEST(Vocabulary, StandardHas64Words) {
  const auto& v = Vocabulary::standard();
  EXPECT_EQ(v.size(), 64u);
  EXPECT_EQ(v.word(v.bos()), "<bos>");
  EXPECT_EQ(v.word(v.eos()), "<eos>");
}

TEST(Vocabulary, RoundTrip) {
  const auto& v = Vocabulary::standard();
  EXPECT_EQ(v.decode(v.encode("short answer ok")), "short answer ok");
  EXPECT_TRUE(v.encode("").empty());
}

TEST(Vocabulary, UnknownWordThrows) {
  try {
    Vocabulary::standard().encode("zzz-not-in-vocab");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_word);
  }
  const auto lenient = Vocabulary::standard().encode_lenient("zzz-not-in-vocab ok");
  ASSERT_EQ(lenient.size(), 2u);
  EXPECT_EQ(lenient[0], Vocabulary::standard().unk());
}

TEST(Vocabulary, GenerationPromptEndsWithAssistantMarker) {
  const auto& v = Vocabulary::standard();
  const std::vector<Message> msgs{{Role::user, "ok"}};
  const auto p = render_generation_prompt(v, msgs);
  ASSERT_GE(p.size(), 3u);
  EXPECT_EQ(p.front(), v.bos());
  EXPECT_EQ(v.word(p.back()), "<assistant>");
  EXPECT_EQ(p[p.size() - 2], v.id("ok"));
}

TEST(LogProbsForced, ZeroParamsUniform) {
  PolicyParams p(16, 2);
  const std::vector<TokenId> ctx{1, 2}, resp{3, 4, 5};
  for (double lp : log_probs_forced(p, ctx, resp)) EXPECT_NEAR(lp, -std::log(16.0), 1e-12);
}

TEST(LogProbsForced, BiasedToken) {
  const std::size_t V = 16;
  PolicyParams p(V, 2);
  p.bias(5) = 10.0;
  const std::vector<TokenId> ctx{1}, resp{5};
  const double expected = -std::log(1.0 + (V - 1) * std::exp(-10.0));
  EXPECT_NEAR(log_probs_forced(p, ctx, resp)[0], expected, 1e-12);
}

TEST(LogProbsForced, OutOfRangeToken) {
  PolicyParams p(16, 2);
  const std::vector<TokenId> ctx{1}, resp{16};
  try {
    log_probs_forced(p, ctx, resp);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::token_out_of_range);
  }
}

TEST(LogProbsForced, OnlyLastKTokensMatter) {
  CounterRng rng(3);
  const auto p = random_params(12, 2, rng);
  const std::vector<TokenId> a{7, 7, 7, 1, 2}, b{3, 1, 2};
  const std::vector<TokenId> resp{4, 5};
  const auto la = log_probs_forced(p, a, resp);
  const auto lb = log_probs_forced(p, b, resp);
  for (std::size_t i = 0; i < resp.size(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-15);
}

TEST(LogProbsForced, MatchesDirectLogitFormula) {
  CounterRng rng(4);
  const std::size_t V = 10;
  const auto p = random_params(V, 2, rng);
  const std::vector<TokenId> ctx{2, 9}, resp{4};
  std::vector<double> logits(V);
  for (std::size_t j = 0; j < V; ++j) {
    logits[j] = p.bias(static_cast<TokenId>(j)) + p.weight(0, 9, static_cast<TokenId>(j)) +
                p.weight(1, 2, static_cast<TokenId>(j));
  }
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  EXPECT_NEAR(log_probs_forced(p, ctx, resp)[0], logits[4] - std::log(z), 1e-12);
}

TEST(Sample, EosBiasTerminatesImmediately) {
  PolicyParams p(16, 2);
  p.bias(1) = 30.0;
  const std::vector<TokenId> ctx{0};
  const auto r = sample(p, ctx, 1.0, 8, 42, 1);
  EXPECT_EQ(r.tokens, std::vector<TokenId>{1});
  EXPECT_EQ(r.terminated_by, Termination::eos);
}

TEST(Sample, Deterministic) {
  CounterRng rng(5);
  const auto p = random_params(16, 2, rng);
  const std::vector<TokenId> ctx{0, 3};
  EXPECT_EQ(sample(p, ctx, 1.0, 10, 99, 1), sample(p, ctx, 1.0, 10, 99, 1));
}

TEST(Sample, MatchesReferenceSampler) {
  const std::size_t V = 16;
  const TokenId eos = 1;
  PolicyParams p(V, 2);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // Reference: uniform categorical, one draw per token, inverse CDF.
    CounterRng rng(seed);
    std::vector<TokenId> expected;
    for (int t = 0; t < 8; ++t) {
      const double u = rng.uniform();
      TokenId pick = static_cast<TokenId>(V - 1);
      for (std::size_t j = 0; j < V; ++j) {
        if (u < static_cast<double>(j + 1) / static_cast<double>(V)) {
          pick = static_cast<TokenId>(j);
          break;
        }
      }
      expected.push_back(pick);
      if (pick == eos) break;
    }
    const std::vector<TokenId> ctx{0};
    const auto got = sample(p, ctx, 1.0, 8, seed, eos);
    EXPECT_EQ(got.tokens, expected) << "seed " << seed;
    for (double lp : got.log_probs) EXPECT_NEAR(lp, -std::log(16.0), 1e-12);
  }
}

TEST(Sample, LogProbsAgreeWithForcedScoring) {
  CounterRng rng(6);
  const auto p = random_params(16, 2, rng, 1.0);
  const std::vector<TokenId> ctx{0, 5};
  const auto g = sample(p, ctx, 0.7, 12, 7, 1);
  const auto forced = log_probs_forced(p, ctx, g.tokens);
  ASSERT_EQ(forced.size(), g.log_probs.size());
  for (std::size_t i = 0; i < forced.size(); ++i) EXPECT_NEAR(forced[i], g.log_probs[i], 1e-12);
}

TEST(GradLogProbs, ZeroWeightsZeroGradient) {
  CounterRng rng(7);
  const auto p = random_params(12, 2, rng);
  const std::vector<TokenId> ctx{1, 2}, resp{3, 4};
  const std::vector<double> w{0.0, 0.0};
  for (double g : grad_log_probs_forced(p, ctx, resp, w)) EXPECT_EQ(g, 0.0);
}

TEST(GradLogProbs, UniformClosedForm) {
  const std::size_t V = 8;
  PolicyParams p(V, 2);
  const std::vector<TokenId> ctx{2}, resp{5};
  const std::vector<double> w{1.5};
  const auto g = grad_log_probs_forced(p, ctx, resp, w);
  for (std::size_t j = 0; j < V; ++j) {
    const double one_hot = j == 5 ? 1.0 : 0.0;
    EXPECT_NEAR(g[p.index_bias(static_cast<TokenId>(j))], 1.5 * (one_hot - 1.0 / V), 1e-14);
  }
}

TEST(GradLogProbs, MatchesFiniteDifferences) {
  CounterRng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_params(10, 2, rng, 1.0);
    const auto ctx = random_tokens(10, 3, rng);
    const auto resp = random_tokens(10, 4, rng);
    std::vector<double> w(resp.size());
    for (auto& x : w) x = 2.0 * rng.uniform() - 1.0;
    const auto g = grad_log_probs_forced(p, ctx, resp, w);
    const auto objective = [&] {
      const auto lp = log_probs_forced(p, ctx, resp);
      return std::inner_product(lp.begin(), lp.end(), w.begin(), 0.0);
    };
    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < p.num_params(); ++i) {
      const double keep = p.values()[i];
      p.values()[i] = keep + h;
      const double up = objective();
      p.values()[i] = keep - h;
      const double down = objective();
      p.values()[i] = keep;
      const double fd = (up - down) / (2 * h);
      max_rel = std::max(max_rel, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
    }
    EXPECT_LT(max_rel, 1e-4);
  }
}

TEST(Snapshot, SaveLoadRoundTrip) {
  TempDir dir("snap");
  CounterRng rng(9);
  auto p = random_params(12, 2, rng);
  p.version = 17;
  save_snapshot(p, dir.path() / "p.bin");
  const auto q = load_snapshot(dir.path() / "p.bin");
  EXPECT_EQ(q.version, 17u);
  EXPECT_EQ(q.vocab_size(), 12u);
  EXPECT_EQ(q.context(), 2u);
  ASSERT_EQ(q.num_params(), p.num_params());
  for (std::size_t i = 0; i < p.num_params(); ++i) EXPECT_EQ(q.values()[i], p.values()[i]);
}

TEST(SnapshotStore, PublishRequiresNextVersion) {
  SnapshotStore store(PolicyParams(4, 1));
  auto next = std::make_shared<PolicyParams>(4, 1);
  next->version = 2;
  try {
    store.publish(next);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::version_skew);
  }
  next->version = 1;
  const auto held = store.current();
  store.publish(next);
  EXPECT_EQ(store.current_version(), 1u);
  EXPECT_EQ(held->version, 0u);
  EXPECT_NE(store.at(0), nullptr);
  store.prune_before(1);
  EXPECT_EQ(store.at(0), nullptr);
  EXPECT_NE(store.at(1), nullptr);
}

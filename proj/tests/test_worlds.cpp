// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "nextsig/error.hpp"
#include "nextsig/queue.hpp"
#include "nextsig/recorder.hpp"
#include "nextsig/worlds.hpp"
#include "test_util.hpp"

using namespace nextsig;
using nextsig::testing::TempDir;

namespace {

const Vocabulary& V() { return Vocabulary::standard(); }

std::vector<TokenId> words(const std::string& text) {
  auto t = V().encode(text);
  t.push_back(V().eos());
  return t;
}

JudgeRequest reaction(const std::string& first_line) {
  JudgeRequest r;
  r.next_state = first_line + "\nwhat 2 plus 3 please solve";
  return r;
}

}  // namespace

TEST(Persona, ScoreExtremes) {
  const auto p = Persona::student();
  const HomeworkProblem q{2, 2, "plus"};
  EXPECT_EQ(personalization_score(p, V(), q, words("so its 4")), 1.0);
  EXPECT_EQ(personalization_score(p, V(), q, words("** step 1. the answer is 4 therefore")), 0.0);
}

TEST(Persona, ScoreTwoOfFour) {
  const auto p = Persona::student();
  // bold marker (violates no_bold), no structure marker, 5 words, no casual marker.
  const auto resp = words("** the answer is 4");
  const auto sat = check_preferences(p, V(), resp);
  ASSERT_EQ(sat.size(), 4u);
  EXPECT_EQ(sat, (std::vector<bool>{false, true, true, false}));
  EXPECT_EQ(personalization_score(p, V(), {2, 2, "plus"}, resp), 0.5);
}

TEST(Persona, SnapScore) {
  EXPECT_EQ(snap_score(0.26), 0.25);
  EXPECT_EQ(snap_score(2.0 / 3.0), 0.75);
  EXPECT_EQ(snap_score(-1.0), 0.0);
}

TEST(PersonaStep, DirectiveNamesViolatedRule) {
  auto p = Persona::student();
  p.p_directive = 1.0;
  CounterRng rng(1);
  const auto r = persona_step(p, V(), {}, words("** so 4"), rng);
  EXPECT_FALSE(r.satisfied);
  EXPECT_TRUE(r.directive);
  EXPECT_EQ(r.violated_rule, 0u);
  EXPECT_EQ(r.reaction, p.rules[0].directive);
  EXPECT_EQ(r.message.content.substr(0, r.reaction.size()), r.reaction);
  EXPECT_EQ(r.message.role, Role::user);
}

TEST(PersonaStep, SatisfiedApproves) {
  const auto p = Persona::student();
  CounterRng rng(2);
  const auto r = persona_step(p, V(), {}, words("yeah its 4"), rng);
  EXPECT_TRUE(r.satisfied);
  EXPECT_FALSE(r.directive);
  EXPECT_NE(std::find(p.approvals.begin(), p.approvals.end(), r.reaction), p.approvals.end());
}

TEST(PersonaStep, ReproducibleUnderSeed) {
  const auto p = Persona::student();
  for (std::uint64_t s = 0; s < 20; ++s) {
    CounterRng a(s), b(s);
    const auto ra = persona_step(p, V(), {}, words("** step 4"), a);
    const auto rb = persona_step(p, V(), {}, words("** step 4"), b);
    EXPECT_EQ(ra.message, rb.message);
    EXPECT_EQ(ra.directive, rb.directive);
  }
}

TEST(Persona, JsonRoundTrip) {
  const auto p = Persona::teacher();
  const auto q = persona_from_json(to_json(p));
  EXPECT_EQ(q.id, p.id);
  EXPECT_EQ(q.rules.size(), p.rules.size());
  EXPECT_EQ(persona_from_json("student").id, Persona::student().id);
  EXPECT_THROW(persona_from_json(nlohmann::json{{"rules", 3}}), Error);
}

TEST(WorldRules, PersonaReplyVerdicts) {
  const auto p = Persona::student();
  RuleSetRegistry reg;
  register_world_rules(reg, p, 0.0);
  ScriptedJudge judge(reg, "persona_reply");
  EXPECT_EQ(judge_turn(reaction("ok thanks"), 1, judge, JudgeMode::binary, 1)[0].score, 1);
  EXPECT_EQ(judge_turn(reaction(p.rules[2].directive), 1, judge, JudgeMode::binary, 1)[0].score, -1);
  EXPECT_EQ(judge_turn(reaction("hmm"), 1, judge, JudgeMode::binary, 1)[0].score, 0);
  const auto opd = judge_turn(reaction(p.rules[2].directive), 1, judge, JudgeMode::opd, 1);
  ASSERT_EQ(opd.size(), 1u);
  EXPECT_EQ(opd[0].score, 1);
  EXPECT_EQ(opd[0].hint, p.rules[2].directive);
  EXPECT_EQ(judge_turn(reaction("ok thanks"), 1, judge, JudgeMode::opd, 1)[0].score, -1);
}

TEST(WorldRules, ToyStepAccuracy) {
  RuleSetRegistry reg;
  register_world_rules(reg, Persona::student(), 0.3, 1.0);
  ScriptedJudge judge(reg, "toy_step");
  JudgeRequest ok, bad;
  ok.next_state = "ok step 1";
  bad.next_state = "error step 0";
  EXPECT_EQ(judge_turn(ok, 3, judge, JudgeMode::binary, 1)[2].score, 1);
  EXPECT_EQ(judge_turn(bad, 3, judge, JudgeMode::binary, 1)[2].score, -1);
}

TEST(ToyEnv, CorrectAndWrongSteps) {
  const auto task = make_toy_task("t", 4, 4, 7);
  const auto right = V().encode(std::to_string(task.targets[0]));
  const auto wrong = V().encode(std::to_string((task.targets[0] + 1) % 4));
  const auto a = toy_env_step(task, ToyState{}, right, V());
  EXPECT_EQ(a.next_state, "ok step 1");
  EXPECT_EQ(a.state.progress, 1);
  EXPECT_TRUE(a.record.correct);
  const auto b = toy_env_step(task, ToyState{}, wrong, V());
  EXPECT_EQ(b.next_state, "error step 0");
  EXPECT_EQ(b.state.progress, 0);
  const auto c = toy_env_step(task, ToyState{}, V().encode("ok"), V());
  EXPECT_FALSE(c.record.action.has_value());
}

TEST(ToyEnv, OutcomeAndEpisodeEnd) {
  const auto task = make_toy_task("t", 4, 4, 7);
  ToyState s;
  for (int i = 0; i < 4; ++i) s = toy_env_step(task, s, V().encode(std::to_string(task.targets[i])), V()).state;
  EXPECT_TRUE(s.done);
  EXPECT_EQ(toy_env_outcome(task, s), 1);
  try {
    toy_env_step(task, s, V().encode("0"), V());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::episode_finished);
  }
  ToyState miss;
  miss = toy_env_step(task, miss, V().encode(std::to_string((task.targets[0] + 1) % 4)), V()).state;
  for (int i = 0; i < 3; ++i) miss = toy_env_step(task, miss, V().encode(std::to_string(task.targets[i])), V()).state;
  EXPECT_TRUE(miss.done);
  EXPECT_EQ(toy_env_outcome(task, miss), 0);
}

TEST(ToyEnv, UniformPolicySuccessRate) {
  const auto task = make_toy_task("t", 4, 4, 7);
  CounterRng rng(123);
  int wins = 0;
  const int n = 10000;
  for (int e = 0; e < n; ++e) {
    ToyState s;
    while (!s.done) s = toy_env_step(task, s, V().encode(std::to_string(rng.below(4))), V()).state;
    wins += toy_env_outcome(task, s);
  }
  // Binomial(10000, 1/256): four standard deviations.
  const double p = 1.0 / 256.0;
  EXPECT_NEAR(static_cast<double>(wins) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(ToyTask, Validation) {
  EXPECT_THROW(make_toy_task("t", 1, 4, 1), Error);
  EXPECT_THROW(make_toy_task("t", 4, 11, 1), Error);
  EXPECT_THROW(make_toy_task("t", 4, 4, 1, 3), Error);
}

TEST(Pretrain, BasePoliciesPreferTaskStyles) {
  const auto& toy = toy_base_policy(make_toy_task("t", 4, 4, 7));
  const std::vector<Message> msgs{{Role::tool, "task step 0"}};
  const auto ctx = render_generation_prompt(V(), msgs);
  const auto lp = log_softmax(next_token_logits(toy, ctx));
  double digit_mass = 0.0;
  for (int d = 0; d < 4; ++d) digit_mass += std::exp(lp[static_cast<std::size_t>(V().id(std::to_string(d)))]);
  EXPECT_GT(digit_mass, 0.9);
  const auto& persona = persona_base_policy(Persona::student());
  EXPECT_EQ(persona.version, 0u);
  EXPECT_TRUE(persona.all_finite());
}

TEST(WorldSpec, JsonRoundTrip) {
  WorldSpec w;
  w.kind = WorldSpec::Kind::toy_task;
  w.horizon = 3;
  w.seed = 9;
  const auto back = world_spec_from_json(to_json(w));
  EXPECT_EQ(back.kind, WorldSpec::Kind::toy_task);
  EXPECT_EQ(back.horizon, 3);
  EXPECT_EQ(back.seed, 9u);
}

TEST(SpawnParallel, DistinctAndReproducible) {
  WorldSpec w;
  const auto a = spawn_parallel(w, 8);
  const auto b = spawn_parallel(w, 8);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ids.insert(a[i].session_id);
    EXPECT_EQ(a[i].seed, b[i].seed);
  }
  EXPECT_EQ(ids.size(), 8u);
}

namespace {

struct World {
  explicit World(Recorder* rec = nullptr)
      : snapshots(persona_base_policy(Persona::student())),
        gateway(GatewayConfig{{"k"}}, snapshots, V(), queue, rec),
        transport(std::make_shared<InProcessTransport>(gateway)) {}
  SnapshotStore snapshots;
  WorkQueue<JudgeJob> queue;
  Gateway gateway;
  std::shared_ptr<Transport> transport;
};

std::vector<std::string> trace(std::uint64_t seed) {
  World w;
  std::vector<std::string> out;
  WorldSpec spec;
  spec.seed = seed;
  for (const auto& inst : spawn_parallel(spec, 3)) {
    PersonaClient c(Persona::student(), V(), GatewayClient(w.transport, "k"), inst.session_id, inst.seed);
    for (int i = 0; i < 4; ++i) out.push_back(c.step().message.content);
  }
  return out;
}

}  // namespace

TEST(PersonaClient, SameSeedsSameTraces) {
  EXPECT_EQ(trace(5), trace(5));
  EXPECT_NE(trace(5), trace(6));
}

TEST(PersonaClient, SixtyFourConcurrentInstancesStayIsolated) {
  TempDir dir("iso");
  Recorder rec({dir.path()});
  World w(&rec);
  WorldSpec spec;
  const auto instances = spawn_parallel(spec, 64, "iso");
  std::vector<std::vector<std::string>> reactions(instances.size());
  std::vector<std::thread> threads;
  for (const auto& inst : instances) {
    threads.emplace_back([&, inst] {
      PersonaClient c(Persona::student(), V(), GatewayClient(w.transport, "k"), inst.session_id, inst.seed);
      for (int i = 0; i < 5; ++i) reactions[inst.index].push_back(c.step().message.content);
    });
  }
  for (auto& t : threads) t.join();
  rec.flush();
  std::map<std::string, std::vector<RecordEvent>> enqueued;
  for (const auto& e : read_events(rec.live_path())) {
    if (e.kind == EventKind::judge_enqueued) enqueued[*e.session_id].push_back(e);
  }
  EXPECT_EQ(enqueued.size(), instances.size());
  for (const auto& inst : instances) {
    const auto& evs = enqueued[inst.session_id];
    ASSERT_EQ(evs.size(), 4u) << inst.session_id;
    for (std::size_t t = 0; t < evs.size(); ++t) {
      EXPECT_EQ(*evs[t].turn_index, static_cast<int>(t));
      EXPECT_EQ(evs[t].payload["next_state"].get<std::string>(), reactions[inst.index][t]);
    }
  }
}

TEST(ToyEpisode, ClosesWithOutcome) {
  const auto task = make_toy_task("t", 4, 4, 7);
  SnapshotStore snapshots(toy_base_policy(task));
  WorkQueue<JudgeJob> queue;
  Gateway gw(GatewayConfig{{"k"}}, snapshots, V(), queue);
  GatewayClient client(std::make_shared<InProcessTransport>(gw), "k");
  const auto r = run_toy_episode(client, task, V(), "ep", {2, 1.0, std::nullopt});
  EXPECT_TRUE(r.state.done);
  const auto jobs = queue.drain();
  ASSERT_EQ(static_cast<int>(jobs.size()), r.state.steps);
  EXPECT_TRUE(jobs.back().final_turn);
  EXPECT_EQ(jobs.back().outcome, static_cast<double>(r.outcome));
  for (std::size_t i = 0; i < jobs.size(); ++i) EXPECT_EQ(jobs[i].turn.next_state, r.state.trajectory[i].next_state);
}

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "nextsig/cli.hpp"
#include "nextsig/error.hpp"
#include "test_util.hpp"

using namespace nextsig;
using nextsig::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines, bool final_newline = true) {
  std::ofstream out(p, std::ios::trunc);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out << lines[i];
    if (i + 1 < lines.size() || final_newline) out << "\n";
  }
}

RunSpec spec_in(const std::filesystem::path& out, PipelineMode mode, int steps, std::uint64_t seed = 1) {
  RunSpec s;
  s.mode = mode;
  s.steps = steps;
  s.seed = seed;
  s.out = out;
  return s;
}

}  // namespace

TEST(Simulate, WritesCsvAndSummary) {
  TempDir dir("sim");
  std::ostringstream log;
  EXPECT_EQ(cmd_simulate(spec_in(dir.path(), PipelineMode::combined, 2), log), 0);
  const auto rows = lines_of(dir.path() / "scores.csv");
  ASSERT_GE(rows.size(), 3u);  // header plus >= 2 score rows
  EXPECT_EQ(rows[0], "updates,policy_version,score");
  const auto summary = nlohmann::json::parse(slurp(dir.path() / "summary.json"));
  EXPECT_EQ(summary["updates"], 2);
  EXPECT_EQ(summary["final_version"], 2);
  EXPECT_TRUE(summary.contains("totals"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "records" / "archive" / "v0.jsonl"));
}

TEST(Simulate, IdenticalSeedsIdenticalCsv) {
  TempDir a("sim-a"), b("sim-b");
  std::ostringstream log;
  cmd_simulate(spec_in(a.path(), PipelineMode::binary, 3, 4), log);
  cmd_simulate(spec_in(b.path(), PipelineMode::binary, 3, 4), log);
  EXPECT_EQ(slurp(a.path() / "scores.csv"), slurp(b.path() / "scores.csv"));
}

TEST(Simulate, ConfigFileOverridesFlags) {
  TempDir dir("cfg");
  {
    std::ofstream(dir.path() / "c.json") << R"({"m_votes": 3, "w_opd": 0.25})";
  }
  auto s = spec_in(dir.path(), PipelineMode::combined, 1);
  s.m_votes = 1;
  s.config = dir.path() / "c.json";
  const auto c = resolve_config(s);
  EXPECT_EQ(c.m_votes, 3);
  EXPECT_EQ(c.w_opd, 0.25);
}

class ReplayTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("replay");
    std::ostringstream log;
    for (auto mode : {PipelineMode::combined, PipelineMode::opd}) {
      cmd_simulate(spec_in(dir_->path() / to_string(mode), mode, 2), log);
    }
    RunSpec s = spec_in(dir_->path() / "stepwise", PipelineMode::stepwise, 2);
    s.preset = TrackPreset::general;
    cmd_simulate(s, log);
  }
  static void TearDownTestSuite() { delete dir_; }
  static TempDir* dir_;
};

TempDir* ReplayTest::dir_ = nullptr;

TEST_F(ReplayTest, UntamperedRecordsHaveNoMismatch) {
  for (const char* run : {"combined", "opd", "stepwise"}) {
    const auto report = replay_records(dir_->path() / run / "records");
    EXPECT_TRUE(report.mismatches.empty()) << run << ": " << report.mismatches.front().what;
    EXPECT_GT(report.samples_checked, 0u) << run;
  }
  std::ostringstream out;
  EXPECT_EQ(cmd_replay(dir_->path() / "combined" / "records", out), 0);
}

TEST_F(ReplayTest, EditedAdvantageReportedAtItsLine) {
  const auto src = dir_->path() / "combined" / "records" / "archive" / "v0.jsonl";
  auto lines = lines_of(src);
  std::size_t target = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find("\"sample_submitted\"") != std::string::npos) {
      target = i;
      break;
    }
  }
  auto j = nlohmann::json::parse(lines[target]);
  j["payload"]["advantage"][0] = j["payload"]["advantage"][0].get<double>() + 0.5;
  lines[target] = j.dump();
  TempDir out("tamper");
  write_lines(out.path() / "v0.jsonl", lines);
  const auto report = replay_records(out.path() / "v0.jsonl");
  ASSERT_EQ(report.mismatches.size(), 1u);
  EXPECT_EQ(report.mismatches[0].line, target + 1);
  std::ostringstream text;
  EXPECT_EQ(cmd_replay(out.path() / "v0.jsonl", text), 1);
}

TEST_F(ReplayTest, EditedVoteIsCaught) {
  const auto src = dir_->path() / "combined" / "records" / "archive" / "v0.jsonl";
  auto lines = lines_of(src);
  for (auto& l : lines) {
    if (l.find("\"judge_vote\"") == std::string::npos) continue;
    auto j = nlohmann::json::parse(l);
    if (j["payload"]["mode"] != "binary") continue;
    j["payload"]["votes"][0]["raw"] = "\\boxed{1}";
    j["payload"]["votes"][0]["score"] = -1;
    l = j.dump();
    break;
  }
  TempDir out("tamper-vote");
  write_lines(out.path() / "v0.jsonl", lines);
  EXPECT_FALSE(replay_records(out.path() / "v0.jsonl").mismatches.empty());
}

TEST_F(ReplayTest, TruncatedFinalLineNamesLine) {
  const auto src = dir_->path() / "opd" / "records" / "archive" / "v0.jsonl";
  auto lines = lines_of(src);
  ASSERT_GE(lines.size(), 2u);
  lines.back() = lines.back().substr(0, lines.back().size() / 2);
  TempDir out("trunc");
  write_lines(out.path() / "v0.jsonl", lines, false);
  try {
    replay_records(out.path() / "v0.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse_error);
    EXPECT_NE(std::string(e.what()).find(":" + std::to_string(lines.size()) + ":"), std::string::npos) << e.what();
  }
}

namespace {

struct LiveGateway {
  explicit LiveGateway(const std::filesystem::path& dir)
      : recorder({dir}),
        snapshots(persona_base_policy(Persona::student())),
        gateway(GatewayConfig{{"k"}}, snapshots, Vocabulary::standard(), queue, &recorder) {}
  Recorder recorder;
  SnapshotStore snapshots;
  WorkQueue<JudgeJob> queue;
  Gateway gateway;
};

}  // namespace

TEST(Repl, HumanReplyBecomesJudgeJob) {
  TempDir dir("repl");
  LiveGateway g(dir.path());
  ReplOptions opt;
  opt.api_key = "k";
  opt.session_id = "human";
  opt.shadow = Persona::student();
  std::istringstream in("what 2 plus 2 please solve\ngood, thanks\n/quit\n");
  std::ostringstream out;
  EXPECT_EQ(cmd_repl(opt, std::make_shared<InProcessTransport>(g.gateway), in, out), 0);
  EXPECT_NE(out.str().find("closed human"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("would say"), std::string::npos);
  g.recorder.flush();
  bool found = false;
  for (const auto& e : read_events(g.recorder.live_path())) {
    if (e.kind == EventKind::judge_enqueued && e.session_id == "human" && e.turn_index == 0) {
      EXPECT_EQ(e.payload["next_state"], "good, thanks");
      found = true;
    }
  }
  EXPECT_TRUE(found);
  EXPECT_TRUE(g.gateway.sessions().snapshot("human")->closed);
}

TEST(Repl, ConnectionFailureReported) {
  ReplOptions opt;
  opt.gateway_url = "http://127.0.0.1:1";
  opt.api_key = "k";
  std::istringstream in("hello\n");
  std::ostringstream out;
  EXPECT_EQ(cmd_repl(opt, in, out), 2);
  EXPECT_NE(out.str().find("error"), std::string::npos);
}

TEST(Repl, RunsBesidePersonaClientsWithoutInterference) {
  TempDir dir("repl-mix");
  LiveGateway g(dir.path());
  auto transport = std::make_shared<InProcessTransport>(g.gateway);
  WorldSpec spec;
  const auto instances = spawn_parallel(spec, 8, "p");
  std::vector<std::thread> threads;
  for (const auto& inst : instances) {
    threads.emplace_back([&, inst] {
      PersonaClient c(Persona::student(), Vocabulary::standard(), GatewayClient(transport, "k"), inst.session_id,
                      inst.seed);
      for (int i = 0; i < 6; ++i) c.step();
    });
  }
  ReplOptions opt;
  opt.api_key = "k";
  opt.session_id = "human";
  std::istringstream in("hello\nok thanks\nno\n/quit\n");
  std::ostringstream out;
  EXPECT_EQ(cmd_repl(opt, transport, in, out), 0);
  for (auto& t : threads) t.join();
  g.recorder.flush();
  std::map<std::string, std::vector<int>> turns;
  for (const auto& e : read_events(g.recorder.live_path())) {
    if (e.kind == EventKind::turn) turns[*e.session_id].push_back(*e.turn_index);
  }
  EXPECT_EQ(turns.size(), 9u);
  EXPECT_EQ(turns["human"], (std::vector<int>{0, 1, 2}));
  for (const auto& inst : instances) EXPECT_EQ(turns[inst.session_id], (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

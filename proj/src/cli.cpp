// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "nextsig/advantage.hpp"
#include "nextsig/client.hpp"
#include "nextsig/error.hpp"
#include "nextsig/judge.hpp"
#include "nextsig/recorder.hpp"

namespace nextsig {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kReplayTol = 1e-9;

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << text;
}

std::string api_key_from_env(const std::string& fallback) {
  const char* v = std::getenv(kApiKeyEnv);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

PipelineConfig resolve_config(const RunSpec& spec) {
  PipelineConfig c = PipelineConfig::for_preset(spec.preset, spec.mode);
  if (spec.m_votes) c.m_votes = *spec.m_votes;
  if (spec.w_binary) c.w_binary = *spec.w_binary;
  if (spec.w_opd) c.w_opd = *spec.w_opd;
  if (spec.config) c = apply_config_json(c, read_json_file(*spec.config));
  c.validate();
  return c;
}

WorldSpec resolve_world(const RunSpec& spec) {
  WorldSpec w;
  if (spec.world) {
    w = load_world_spec(*spec.world);
  } else if (spec.preset == TrackPreset::general) {
    w.kind = WorldSpec::Kind::toy_task;
    w.max_len = 2;
  }
  w.seed = spec.seed;
  return w;
}

int cmd_simulate(const RunSpec& spec, std::ostream& log) {
  const PipelineConfig config = resolve_config(spec);
  const WorldSpec world = resolve_world(spec);
  fs::create_directories(spec.out);
  const fs::path records = spec.out / "records";
  // Stale logs from an earlier run in the same directory would mix versions.
  fs::remove_all(records);

  OrchestratorOptions options;
  options.record_dir = records;
  options.seed = spec.seed;
  options.clients = spec.clients;
  options.api_key = api_key_from_env(options.api_key);

  RunSummary summary;
  {
    Orchestrator orch(config, world, options);
    summary = orch.run_lockstep(spec.steps);
    orch.recorder().flush();
  }
  write_text(spec.out / "summary.json", summary.to_json().dump(2) + "\n");
  write_text(spec.out / "scores.csv", summary.scores_csv());
  log << "updates " << summary.updates << " version " << summary.final_version << " submitted "
      << summary.totals.submitted << " trained " << summary.totals.trained;
  if (!summary.scores.empty()) {
    log << " score " << summary.scores.front().score << " -> " << summary.scores.back().score;
  }
  log << "\n";
  return summary.updates == spec.steps ? 0 : 3;
}

// ---- replay -------------------------------------------------------------------

namespace {

std::vector<fs::path> record_files(const fs::path& path) {
  if (!fs::is_directory(path)) {
    if (!fs::exists(path)) throw Error(Errc::not_found, path.string());
    return {path};
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<double> doubles(const json& j) { return j.get<std::vector<double>>(); }

struct ReplayState {
  std::map<std::pair<std::string, int>, std::optional<std::string>> opd_hint;
  std::map<std::pair<std::string, int>, int> binary_r;
};

void check_vector(ReplayReport& report, const std::string& file, std::size_t line, const std::vector<double>& want,
                  const std::vector<double>& got, const std::string& what) {
  if (want.size() != got.size()) {
    report.mismatches.push_back({file, line, what + " length " + std::to_string(got.size()) + " != " +
                                                 std::to_string(want.size())});
    return;
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (std::abs(want[i] - got[i]) > kReplayTol) {
      report.mismatches.push_back({file, line, what + "[" + std::to_string(i) + "] recorded " +
                                                   std::to_string(got[i]) + " recomputed " + std::to_string(want[i])});
      return;
    }
  }
}

void replay_vote(ReplayReport& report, ReplayState& state, const std::string& file, std::size_t line,
                 const RecordEvent& ev) {
  const JudgeMode mode = ev.payload.at("mode").get<std::string>() == "opd" ? JudgeMode::opd : JudgeMode::binary;
  std::vector<JudgeVerdict> verdicts;
  std::vector<int> scores;
  for (const auto& v : ev.payload.at("votes")) {
    const auto raw = v.at("raw").get<std::string>();
    JudgeVerdict parsed;
    try {
      parsed = parse_verdict(raw, mode);
    } catch (const Error& e) {
      report.mismatches.push_back({file, line, std::string("vote no longer parses: ") + e.what()});
      continue;
    }
    ++report.verdicts_checked;
    if (parsed.score != v.at("score").get<int>()) {
      report.mismatches.push_back({file, line, "vote score recorded " + std::to_string(v.at("score").get<int>()) +
                                                   " recomputed " + std::to_string(parsed.score)});
    }
    if (v.contains("hint") != parsed.hint.has_value() ||
        (parsed.hint && v.at("hint").get<std::string>() != *parsed.hint)) {
      report.mismatches.push_back({file, line, "vote hint differs from raw judge text"});
    }
    scores.push_back(parsed.score);
    verdicts.push_back(std::move(parsed));
  }
  const auto key = std::make_pair(ev.session_id.value_or(""), ev.turn_index.value_or(-1));
  if (mode == JudgeMode::opd) {
    state.opd_hint[key] = select_hint(verdicts);
  } else {
    state.binary_r[key] = majority_vote(scores);
  }
}

void replay_sample(ReplayReport& report, ReplayState& state, const std::string& file, std::size_t line,
                   const RecordEvent& ev) {
  const json& p = ev.payload;
  const auto source = sample_source_from_string(p.at("source").get<std::string>());
  const auto recorded = doubles(p.at("advantage"));
  const auto key = std::make_pair(ev.session_id.value_or(""), ev.turn_index.value_or(-1));
  ++report.samples_checked;

  if (source == SampleSource::stepwise) {
    StepRewardTable table{p.at("task_id").get<std::string>(), p.at("rewards").get<std::vector<std::vector<double>>>()};
    const auto g = p.at("rollout").get<std::size_t>();
    const auto t = p.at("step").get<std::size_t>();
    if (g >= table.rewards.size() || t >= table.rewards[g].size()) {
      report.mismatches.push_back({file, line, "rollout/step outside the reward table"});
      return;
    }
    const double outcome = p.at("outcome").get<double>();
    const auto votes = p.at("votes").get<std::vector<int>>();
    const double reward = p.at("integrated").get<bool>() ? integrated_step_reward(outcome, votes) : outcome;
    check_vector(report, file, line, {reward}, {table.rewards[g][t]}, "reward");
    const auto adv = step_index_group_advantage(table);
    check_vector(report, file, line, std::vector<double>(recorded.size(), adv[g][t]), recorded, "advantage");
    return;
  }

  std::optional<int> r;
  if (p.contains("votes")) {
    const auto votes = p.at("votes").get<std::vector<int>>();
    r = majority_vote(votes);
    if (p.contains("r") && p.at("r").get<int>() != *r) {
      report.mismatches.push_back({file, line, "majority recorded " + std::to_string(p.at("r").get<int>()) +
                                                   " recomputed " + std::to_string(*r)});
    }
    const auto it = state.binary_r.find(key);
    if (it != state.binary_r.end() && it->second != *r) {
      report.mismatches.push_back({file, line, "votes differ from the judge_vote event"});
    }
  }
  if (p.contains("hint")) {
    const auto it = state.opd_hint.find(key);
    if (it != state.opd_hint.end() && it->second != p.at("hint").get<std::string>()) {
      report.mismatches.push_back({file, line, "hint differs from the one selected from the judge votes"});
    }
  }

  const auto old_lp = doubles(p.at("old_log_probs"));
  std::vector<double> want;
  switch (source) {
    case SampleSource::binary:
      if (!r) {
        report.mismatches.push_back({file, line, "binary sample without votes"});
        return;
      }
      want = binary_advantage(*r, recorded.size()).values;
      break;
    case SampleSource::opd:
      want = opd_advantage(doubles(p.at("teacher_log_probs")), old_lp).values;
      break;
    case SampleSource::combined:
      if (!r) {
        report.mismatches.push_back({file, line, "combined sample without votes"});
        return;
      }
      want = combined_advantage(*r, doubles(p.at("teacher_log_probs")), old_lp, p.at("w_binary").get<double>(),
                                p.at("w_opd").get<double>())
                 .values;
      break;
    default:
      break;
  }
  check_vector(report, file, line, want, recorded, "advantage");
}

}  // namespace

ReplayReport replay_records(const fs::path& path) {
  ReplayReport report;
  ReplayState state;
  for (const auto& file : record_files(path)) {
    std::ifstream in(file);
    if (!in) throw Error(Errc::io_error, "cannot open " + file.string());
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
      ++line;
      if (text.empty()) continue;
      RecordEvent ev;
      try {
        ev = parse_event_line(text);
      } catch (const Error& e) {
        throw Error(Errc::parse_error, file.string() + ":" + std::to_string(line) + ": " + e.what());
      }
      ++report.events;
      try {
        if (ev.kind == EventKind::judge_vote) replay_vote(report, state, file.string(), line, ev);
        if (ev.kind == EventKind::sample_submitted) replay_sample(report, state, file.string(), line, ev);
      } catch (const json::exception& e) {
        throw Error(Errc::parse_error, file.string() + ":" + std::to_string(line) + ": " + e.what());
      } catch (const Error& e) {
        report.mismatches.push_back({file.string(), line, e.what()});
      }
    }
  }
  return report;
}

int cmd_replay(const fs::path& path, std::ostream& out) {
  ReplayReport report;
  try {
    report = replay_records(path);
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return 2;
  }
  for (const auto& m : report.mismatches) out << m.file << ":" << m.line << ": " << m.what << "\n";
  out << report.events << " events, " << report.samples_checked << " samples, " << report.verdicts_checked
      << " verdicts, " << report.mismatches.size() << " mismatches\n";
  return report.mismatches.empty() ? 0 : 1;
}

// ---- repl ---------------------------------------------------------------------

int cmd_repl(const ReplOptions& options, std::istream& in, std::ostream& out) {
  return cmd_repl(options, std::make_shared<HttpTransport>(options.gateway_url), in, out);
}

int cmd_repl(const ReplOptions& options, std::shared_ptr<Transport> transport, std::istream& in, std::ostream& out) {
  GatewayClient client(std::move(transport), options.api_key);
  const std::string session = options.session_id.empty() ? "repl-" + std::to_string(now_us()) : options.session_id;
  std::vector<Message> messages;
  if (options.shadow) messages.push_back({Role::system, options.shadow->system_prompt});
  const Vocabulary& vocab = Vocabulary::standard();
  CounterRng rng(stable_hash(session));
  bool chatted = false;
  std::string line;
  try {
    while (true) {
      out << "> " << std::flush;
      if (!std::getline(in, line)) break;
      if (line == "/quit") break;
      if (line.empty()) continue;
      messages.push_back({Role::user, line});
      const ChatResponse resp = client.chat(session, messages, options.generation);
      chatted = true;
      out << resp.response_text << "  [v" << resp.policy_version << " turn " << resp.turn_index << "]\n";
      messages.push_back({Role::assistant, resp.response_text});
      if (options.shadow) {
        const auto reply = persona_step(*options.shadow, vocab, messages, resp.response_tokens, rng);
        out << "  (" << options.shadow->id << " would say: " << reply.reaction << ")\n";
      }
    }
    if (chatted) {
      const auto closed = client.close(session, messages, std::nullopt);
      out << "closed " << closed.session_id << " after " << closed.turns << " turns\n";
    }
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

// ---- entry point ----------------------------------------------------------------

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

int cmd_serve(const RunSpec& spec, const std::string& host, int port, std::ostream& log) {
  const PipelineConfig config = resolve_config(spec);
  const WorldSpec world = resolve_world(spec);
  OrchestratorOptions options;
  options.record_dir = spec.out / "records";
  options.seed = spec.seed;
  options.api_key = api_key_from_env(options.api_key);
  Orchestrator orch(config, world, options);
  const int bound = orch.start_services(true, 2, host, port);
  log << "listening on http://" << host << ":" << bound << " (preset " << to_string(config.preset) << ", mode "
      << to_string(config.mode) << ")\n"
      << std::flush;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  orch.stop_services();
  orch.recorder().flush();
  const auto s = orch.summary();
  log << "stopped at version " << s.final_version << " after " << s.updates << " updates\n";
  return 0;
}

void add_run_flags(CLI::App* cmd, RunSpec& spec, std::string& preset, std::string& mode) {
  cmd->add_option("--preset", preset, "personal | general")->check(CLI::IsMember({"personal", "general"}));
  cmd->add_option("--mode", mode, "binary | opd | combined | stepwise")
      ->check(CLI::IsMember({"binary", "opd", "combined", "stepwise"}));
  cmd->add_option("--seed", spec.seed);
  cmd->add_option("--out", spec.out, "output directory");
  cmd->add_option("--m-votes", spec.m_votes, "judge votes per turn");
  cmd->add_option("--w-binary", spec.w_binary);
  cmd->add_option("--w-opd", spec.w_opd);
  cmd->add_option("--config", spec.config, "JSON pipeline config; overrides flags")->check(CLI::ExistingFile);
  cmd->add_option("--world", spec.world, "JSON world spec")->check(CLI::ExistingFile);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"nextsig: learning from next-state signals on a desk-scale policy"};
  app.require_subcommand(1);

  RunSpec spec;
  std::string preset = "personal";
  std::string mode;

  auto* sim = app.add_subcommand("simulate", "run simulated users against the pipeline");
  add_run_flags(sim, spec, preset, mode);
  sim->add_option("--steps", spec.steps, "training updates")->check(CLI::PositiveNumber);
  sim->add_option("--clients", spec.clients, "concurrent simulated sessions")->check(CLI::PositiveNumber);

  fs::path replay_path;
  auto* replay = app.add_subcommand("replay", "recompute verdicts and advantages from a record log");
  replay->add_option("path", replay_path, "JSONL file or record directory")->required();

  ReplOptions repl_opts;
  std::string shadow;
  int max_len = repl_opts.generation.max_len;
  auto* repl = app.add_subcommand("repl", "chat with a running gateway");
  repl->add_option("--gateway-url", repl_opts.gateway_url);
  repl->add_option("--session", repl_opts.session_id);
  repl->add_option("--shadow", shadow, "persona whose reaction is shown after each reply")
      ->check(CLI::IsMember({"student", "teacher"}));
  repl->add_option("--max-len", max_len);

  std::string host = "127.0.0.1";
  int port = 8642;
  auto* serve = app.add_subcommand("serve", "run gateway, judges and trainer over HTTP");
  add_run_flags(serve, spec, preset, mode);
  serve->add_option("--host", host);
  serve->add_option("--port", port);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    spec.preset = track_preset_from_string(preset);
    spec.mode = mode.empty() ? (spec.preset == TrackPreset::general ? PipelineMode::stepwise : PipelineMode::combined)
                             : pipeline_mode_from_string(mode);
    if (*sim) return cmd_simulate(spec, std::cout);
    if (*replay) return cmd_replay(replay_path, std::cout);
    if (*repl) {
      repl_opts.api_key = api_key_from_env("nextsig-local");
      repl_opts.generation.max_len = max_len;
      if (shadow == "student") repl_opts.shadow = Persona::student();
      if (shadow == "teacher") repl_opts.shadow = Persona::teacher();
      return cmd_repl(repl_opts, std::cin, std::cout);
    }
    if (*serve) return cmd_serve(spec, host, port, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace nextsig

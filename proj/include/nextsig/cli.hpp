// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nextsig/orchestrator.hpp"

namespace nextsig {

inline constexpr const char* kApiKeyEnv = "NEXTSIG_API_KEY";

struct RunSpec {
  TrackPreset preset = TrackPreset::personal;
  PipelineMode mode = PipelineMode::combined;
  std::uint64_t seed = 1;
  int steps = 16;  // training updates
  std::filesystem::path out = "nextsig-run";
  std::optional<int> m_votes;
  std::optional<double> w_binary;
  std::optional<double> w_opd;
  std::optional<std::filesystem::path> config;  // JSON; its keys win over flags
  std::optional<std::filesystem::path> world;   // JSON world spec
  std::size_t clients = 8;
};

PipelineConfig resolve_config(const RunSpec& spec);
WorldSpec resolve_world(const RunSpec& spec);

// Writes out/summary.json, out/scores.csv and out/records/. Returns the
// process exit code.
int cmd_simulate(const RunSpec& spec, std::ostream& log);

struct ReplayMismatch {
  std::string file;
  std::size_t line = 0;
  std::string what;
};

struct ReplayReport {
  std::size_t events = 0;
  std::size_t samples_checked = 0;
  std::size_t verdicts_checked = 0;
  std::vector<ReplayMismatch> mismatches;
};

// Recomputes verdict scores from raw judge text and sample advantages from
// the recorded votes, hints, teacher log-probs and group rewards. Accepts a
// JSONL file or a directory of them. Throws parse_error naming file and line.
ReplayReport replay_records(const std::filesystem::path& path);
int cmd_replay(const std::filesystem::path& path, std::ostream& out);

struct ReplOptions {
  std::string gateway_url = "http://127.0.0.1:8642";
  std::string api_key;
  std::string session_id;
  std::optional<Persona> shadow;  // prints what this persona would have replied
  GenerationParams generation;
};

// Line-oriented chat through the gateway; "/quit" closes the session.
int cmd_repl(const ReplOptions& options, std::istream& in, std::ostream& out);
int cmd_repl(const ReplOptions& options, std::shared_ptr<Transport> transport, std::istream& in, std::ostream& out);

// Entry point for the nextsig executable.
int run_cli(int argc, char** argv);

}  // namespace nextsig

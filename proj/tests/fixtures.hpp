// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "nextsig/error.hpp"
#include "nextsig/orchestrator.hpp"

namespace nextsig::testing {

inline const Vocabulary& V() { return Vocabulary::standard(); }

// Replies in order: binary-mode replies first, then opd-mode replies.
class ScriptBackend final : public JudgeBackend {
 public:
  ScriptBackend(std::vector<std::string> binary, std::vector<std::string> opd)
      : binary_(std::move(binary)), opd_(std::move(opd)) {}
  std::string query(const JudgeRequest&, JudgeMode mode, std::uint64_t) override {
    auto& list = mode == JudgeMode::binary ? binary_ : opd_;
    auto& i = mode == JudgeMode::binary ? bi_ : oi_;
    return list[i++ % list.size()];
  }

 private:
  std::vector<std::string> binary_, opd_;
  std::size_t bi_ = 0, oi_ = 0;
};

class DownBackend final : public JudgeBackend {
 public:
  std::string query(const JudgeRequest&, JudgeMode, std::uint64_t) override {
    throw Error(Errc::backend_unavailable, "down");
  }
};

inline JudgeJob make_job(const PolicyParams& params, const std::string& response) {
  JudgeJob job;
  job.session_id = "s";
  job.turn.index = 0;
  job.turn.request = {{Role::system, "sys"}, {Role::user, "what 2 plus 2 please solve"}};
  job.turn.prompt_tokens = render_generation_prompt(V(), job.turn.request);
  job.turn.response_tokens = V().encode(response);
  job.turn.old_log_probs = log_probs_forced(params, job.turn.prompt_tokens, job.turn.response_tokens);
  job.turn.response_text = response;
  job.turn.next_state = "dont use bold stars\nwhat 1 plus 1 please solve";
  job.turn.policy_version = params.version;
  return job;
}

// Every event under `dir`, archives included, in recording order.
inline std::vector<RecordEvent> all_events(const std::filesystem::path& dir) {
  std::vector<RecordEvent> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.path().extension() != ".jsonl") continue;
    auto evs = read_events(entry.path());
    out.insert(out.end(), evs.begin(), evs.end());
  }
  std::sort(out.begin(), out.end(), [](const RecordEvent& a, const RecordEvent& b) { return a.seq < b.seq; });
  return out;
}

inline WorldSpec world_for(TrackPreset preset, std::uint64_t seed) {
  WorldSpec world;
  if (preset == TrackPreset::general) {
    world.kind = WorldSpec::Kind::toy_task;
    world.max_len = 2;
  }
  world.seed = seed;
  return world;
}

// One randomized swap-timing trial: a producer records continuously while the
// caller rotates 1-3 times after random delays, tagging a marker event just
// before each rotation. Returns an empty string when every file holds exactly
// one version, every marker sits in the file of its version and no event is
// lost; otherwise a description of the first violation.
inline std::string recorder_swap_trial(const std::filesystem::path& dir, CounterRng& rng) {
  Recorder rec({dir, true});
  const int swaps = 1 + static_cast<int>(rng.below(3));
  std::vector<int> delays;
  for (int i = 0; i < swaps; ++i) delays.push_back(static_cast<int>(rng.below(300)));
  std::atomic<bool> go{true};
  std::atomic<std::size_t> produced{0};
  std::thread producer([&] {
    int i = 0;
    while (go) {
      rec.record(EventKind::weight_swap, std::nullopt, std::nullopt, {{"from", 0}, {"to", 1}, {"i", i++}});
      produced++;
    }
  });
  for (int s = 0; s < swaps; ++s) {
    std::this_thread::sleep_for(std::chrono::microseconds(delays[s]));
    rec.record(EventKind::weight_swap, std::nullopt, std::nullopt, {{"from", s}, {"to", s + 1}, {"marker", s}});
    rec.rotate_on_version(static_cast<std::uint64_t>(s + 1));
  }
  go = false;
  producer.join();
  rec.flush();
  std::size_t seen = 0;
  for (std::uint64_t v = 0; v <= static_cast<std::uint64_t>(swaps); ++v) {
    const auto path = v == static_cast<std::uint64_t>(swaps) ? rec.live_path() : rec.archive_path(v);
    for (const auto& e : read_events(path)) {
      if (e.version != v) return path.string() + " holds an event of version " + std::to_string(e.version);
      if (e.payload.contains("marker") && e.payload["marker"].get<std::uint64_t>() != v) {
        return "marker " + e.payload["marker"].dump() + " landed in " + path.string();
      }
      ++seen;
    }
  }
  const std::size_t expected = produced.load() + static_cast<std::size_t>(swaps);
  if (seen + rec.metrics().dropped != expected) {
    return "saw " + std::to_string(seen) + " events, expected " + std::to_string(expected);
  }
  return {};
}

}  // namespace nextsig::testing

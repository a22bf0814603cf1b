// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nextsig/advantage.hpp"
#include "nextsig/gateway.hpp"
#include "nextsig/judge.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/recorder.hpp"
#include "nextsig/trainer.hpp"
#include "nextsig/worlds.hpp"

namespace nextsig {

enum class PipelineMode { binary, opd, combined, stepwise };
enum class TrackPreset { personal, general };

const char* to_string(PipelineMode mode);
const char* to_string(TrackPreset preset);
PipelineMode pipeline_mode_from_string(std::string_view s);  // throws invalid_argument
TrackPreset track_preset_from_string(std::string_view s);

struct PipelineConfig {
  PipelineMode mode = PipelineMode::combined;
  TrackPreset preset = TrackPreset::personal;
  int m_votes = 1;
  int batch_trigger = 16;
  double w_binary = 1.0;
  double w_opd = 1.0;
  int max_staleness = 2;
  TrainerConfig trainer;
  bool integrated_reward = true;  // stepwise: outcome + mean vote; false = outcome only
  int rollouts_per_task = 8;
  std::string rule_set = "persona_reply";
  double unclear_negative = 0.3;
  double step_accuracy = 0.9;

  static PipelineConfig for_preset(TrackPreset preset, PipelineMode mode);
  void validate() const;
};

nlohmann::json to_json(const PipelineConfig& c);
// Overlays the keys present in `j` onto `base`.
PipelineConfig apply_config_json(PipelineConfig base, const nlohmann::json& j);

// ---- per-turn pipelines -------------------------------------------------------

struct PipelineOutcome {
  std::optional<Sample> sample;
  std::optional<std::string> drop_reason;
  std::vector<JudgeVerdict> binary_votes;
  std::vector<JudgeVerdict> opd_votes;
  std::optional<int> r;
  std::optional<std::string> hint;
  std::vector<double> teacher_log_probs;
};

JudgeRequest judge_request(const JudgeJob& job);

// Majority of m binary votes broadcast over the response.
PipelineOutcome run_binary_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed);

// Hint from m opd votes; the teacher is `teacher` (the turn's generating
// snapshot) scoring the original response under the hint-enhanced context.
// No hint -> drop "no_valid_hint"; no teacher -> drop "snapshot_evicted".
PipelineOutcome run_opd_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed,
                                 const PolicyParams* teacher, const Vocabulary& vocab);

// Both judge modes; combined advantage with a hint, binary advantage without.
PipelineOutcome run_combined_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed,
                                      const PolicyParams* teacher, const Vocabulary& vocab, double w_binary,
                                      double w_opd);

// ---- batch assembly -----------------------------------------------------------

struct GuaranteeDecision {
  std::string session_id;
  int turn_index = 0;
};

// Every session present in `window` without an effective sample gets its
// most recent sample (highest turn index) appended to `batch`.
std::vector<GuaranteeDecision> at_least_one_guarantee(std::span<const Sample> window, std::vector<Sample>& batch);

struct BatchPlan {
  std::vector<Sample> batch;   // effective samples plus guaranteed ones
  std::vector<Sample> stale;   // older than max_staleness versions, dropped
  std::vector<Sample> masked;  // zero advantage, consumed without entering the batch
  std::vector<GuaranteeDecision> guaranteed;
};

BatchPlan assemble_batch(std::vector<Sample> window, std::uint64_t current_version, int max_staleness);

// ---- step-wise groups ---------------------------------------------------------

struct CompletedGroup {
  std::string task_id;
  std::vector<std::string> sessions;
  std::vector<std::vector<Turn>> turns;                // [g][t]
  std::vector<std::vector<std::vector<int>>> votes;    // [g][t][i]
  std::vector<double> outcomes;                        // [g]
};

// Collects judged steps per rollout; a group completes once every rollout is
// closed and all of its steps are judged.
class StepAggregator {
 public:
  void register_group(std::string task_id, std::vector<std::string> sessions);
  std::optional<CompletedGroup> add(const JudgeJob& job, std::vector<int> votes);
  std::size_t open_groups() const;

 private:
  struct Rollout {
    std::string task_id;
    std::map<int, std::pair<Turn, std::vector<int>>> steps;
    std::optional<int> length;
    double outcome = 0.0;
  };
  std::optional<CompletedGroup> try_complete(const std::string& task_id);

  mutable std::mutex mu_;
  std::map<std::string, std::vector<std::string>> groups_;
  std::map<std::string, Rollout> rollouts_;
};

// Per-step samples for a finished group (integrated or outcome-only rewards).
struct GroupSamples {
  StepRewardTable table;
  std::vector<std::vector<double>> advantages;
  std::vector<Sample> samples;
};

GroupSamples group_samples(const CompletedGroup& group, bool integrated);

// ---- orchestrator ---------------------------------------------------------------

struct OrchestratorOptions {
  std::filesystem::path record_dir = "records";
  bool archive = true;
  std::string api_key = "nextsig-local";
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 36;
  std::size_t eval_problems = 36;
  std::size_t eval_episodes = 64;
  std::size_t clients = 8;
  std::size_t max_rounds = 20000;
};

struct ScorePoint {
  int updates = 0;
  std::uint64_t version = 0;
  double score = 0.0;
};

struct RunTotals {
  std::uint64_t turns_judged = 0;
  std::uint64_t submitted = 0;
  std::uint64_t trained = 0;  // consumed by an update: in the batch or masked
  std::uint64_t in_batch = 0;
  std::uint64_t masked = 0;
  std::uint64_t dropped_stale = 0;
  std::uint64_t guarantees = 0;
  std::uint64_t requeued = 0;
  std::map<std::string, std::uint64_t> dropped;  // by reason, stale included
  std::map<std::string, std::uint64_t> by_source;
};

struct RunSummary {
  PipelineConfig config;
  std::uint64_t seed = 0;
  int updates = 0;
  std::uint64_t final_version = 0;
  std::size_t rounds = 0;
  RunTotals totals;
  std::vector<ScorePoint> scores;
  double runtime_s = 0.0;
  std::string stop_reason;

  nlohmann::json to_json() const;
  std::string scores_csv() const;
};

class Orchestrator {
 public:
  Orchestrator(PipelineConfig config, WorldSpec world, OrchestratorOptions options);
  ~Orchestrator();

  Orchestrator(const Orchestrator&) = delete;
  Orchestrator& operator=(const Orchestrator&) = delete;

  // Judges one queued job; false when the queue is empty.
  bool judge_once();
  // One update when at least batch_trigger samples wait. Returns the report
  // of the update, nullopt when nothing was trained.
  std::optional<TrainReport> train_if_ready();
  std::size_t pending_samples() const;

  // Score of a snapshot: mean personalization score over the evaluation
  // problems, or task success rate over the evaluation episodes.
  double evaluate(const PolicyParams& params) const;

  // Deterministic single-threaded run: clients take turns, each judged turn
  // is processed immediately, and training fires the moment the trigger is
  // reached. Stops after `updates` updates or `max_rounds` client rounds.
  RunSummary run_lockstep(int updates);
  // Same traffic driver, stopped after a fixed number of client rounds.
  RunSummary run_rounds(std::size_t rounds);

  // Threaded services: optional HTTP server, judge workers, trainer.
  // Returns the bound HTTP port (0 without http).
  int start_services(bool http, std::size_t judge_workers = 2, const std::string& host = "127.0.0.1", int port = 0);
  void stop_services();
  void pause_trainer();
  void resume_trainer();
  void pause_judges();
  void resume_judges();
  // The trainer thread spins on the CPU for `busy` while holding the training
  // lock, as a stuck update would.
  void stall_trainer(std::chrono::milliseconds busy);

  RunSummary summary() const;

  Gateway& gateway() { return *gateway_; }
  Recorder& recorder() { return *recorder_; }
  SnapshotStore& snapshots() { return *snapshots_; }
  WorkQueue<JudgeJob>& judge_queue() { return judge_queue_; }
  StepAggregator& aggregator() { return aggregator_; }
  const PipelineConfig& config() const { return config_; }
  const WorldSpec& world() const { return world_; }
  const OrchestratorOptions& options() const { return options_; }
  const Vocabulary& vocab() const { return vocab_; }
  const ToyTask& task() const { return task_; }

 private:
  RunSummary drive(int target_updates, std::size_t max_rounds);
  void process(JudgeJob job);
  void submit(Sample sample, nlohmann::json extra);
  void drop(const std::string& session_id, int turn_index, const std::string& reason, nlohmann::json extra = {});
  void record_votes(const JudgeJob& job, JudgeMode mode, const std::vector<JudgeVerdict>& votes);
  void train_until_idle();
  void note_score(int updates, const PolicyParams& params);
  std::uint64_t job_seed(const JudgeJob& job) const;

  PipelineConfig config_;
  WorldSpec world_;
  OrchestratorOptions options_;
  const Vocabulary& vocab_;
  ToyTask task_;
  RuleSetRegistry registry_;
  std::unique_ptr<JudgeBackend> judge_;
  std::unique_ptr<SnapshotStore> snapshots_;
  std::unique_ptr<Recorder> recorder_;
  WorkQueue<JudgeJob> judge_queue_;
  std::unique_ptr<Gateway> gateway_;
  Trainer trainer_;
  StepAggregator aggregator_;

  mutable std::mutex samples_mu_;
  std::deque<Sample> pending_;
  std::mutex train_mu_;
  mutable std::mutex summary_mu_;
  RunSummary summary_;
  int updates_ = 0;

  std::atomic<bool> stop_{false};
  std::atomic<bool> trainer_paused_{false};
  std::atomic<bool> judges_paused_{false};
  std::atomic<std::int64_t> stall_ms_{0};
  std::atomic<int> judges_busy_{0};
  std::vector<std::thread> threads_;
  std::unique_ptr<GatewayServer> server_;
};

}  // namespace nextsig

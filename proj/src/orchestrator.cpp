// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/orchestrator.hpp"

#include <pthread.h>
#include <sched.h>

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include "nextsig/error.hpp"
#include "nextsig/rng.hpp"

namespace nextsig {

using nlohmann::json;

const char* to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::binary:
      return "binary";
    case PipelineMode::opd:
      return "opd";
    case PipelineMode::combined:
      return "combined";
    case PipelineMode::stepwise:
      return "stepwise";
  }
  return "unknown";
}

const char* to_string(TrackPreset preset) { return preset == TrackPreset::personal ? "personal" : "general"; }

PipelineMode pipeline_mode_from_string(std::string_view s) {
  for (auto m : {PipelineMode::binary, PipelineMode::opd, PipelineMode::combined, PipelineMode::stepwise}) {
    if (s == to_string(m)) return m;
  }
  throw Error(Errc::invalid_argument, "unknown mode '" + std::string(s) + "'");
}

TrackPreset track_preset_from_string(std::string_view s) {
  if (s == "personal") return TrackPreset::personal;
  if (s == "general") return TrackPreset::general;
  throw Error(Errc::invalid_argument, "unknown preset '" + std::string(s) + "'");
}

PipelineConfig PipelineConfig::for_preset(TrackPreset preset, PipelineMode mode) {
  PipelineConfig c;
  c.preset = preset;
  c.mode = mode;
  c.trainer.optimizer = OptimizerKind::sgd;
  c.trainer.eps_low = 0.2;
  c.trainer.eps_high = 0.28;
  if (preset == TrackPreset::personal) {
    c.m_votes = 1;
    c.batch_trigger = 16;
    c.trainer.kl_coef = 0.0;
    c.trainer.lr = 0.5;
    c.rule_set = "persona_reply";
  } else {
    c.m_votes = 3;
    c.batch_trigger = 32;
    c.trainer.kl_coef = 0.01;
    c.trainer.lr = 4.0;
    c.rule_set = "toy_step";
    c.rollouts_per_task = 8;
  }
  c.trainer.batch_trigger = c.batch_trigger;
  return c;
}

void PipelineConfig::validate() const {
  if (m_votes < 1) throw Error(Errc::invalid_argument, "m_votes must be >= 1");
  if (batch_trigger < 1) throw Error(Errc::invalid_argument, "batch_trigger must be >= 1");
  if (max_staleness < 0) throw Error(Errc::invalid_argument, "max_staleness must be >= 0");
  if (mode == PipelineMode::stepwise && rollouts_per_task < 2) {
    throw Error(Errc::invalid_argument, "stepwise mode needs at least two rollouts per task");
  }
  if (unclear_negative < 0.0 || unclear_negative > 1.0) throw Error(Errc::invalid_argument, "unclear_negative");
  if (step_accuracy < 0.0 || step_accuracy > 1.0) throw Error(Errc::invalid_argument, "step_accuracy");
  trainer.validate();
}

json to_json(const PipelineConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"preset", to_string(c.preset)},
          {"m_votes", c.m_votes},
          {"batch_trigger", c.batch_trigger},
          {"w_binary", c.w_binary},
          {"w_opd", c.w_opd},
          {"max_staleness", c.max_staleness},
          {"lr", c.trainer.lr},
          {"optimizer", c.trainer.optimizer == OptimizerKind::sgd ? "sgd" : "adam"},
          {"kl_coef", c.trainer.kl_coef},
          {"eps_low", c.trainer.eps_low},
          {"eps_high", c.trainer.eps_high},
          {"integrated_reward", c.integrated_reward},
          {"rollouts_per_task", c.rollouts_per_task},
          {"rule_set", c.rule_set},
          {"unclear_negative", c.unclear_negative},
          {"step_accuracy", c.step_accuracy}};
}

PipelineConfig apply_config_json(PipelineConfig c, const json& j) {
  try {
    if (j.contains("preset")) {
      const auto mode = j.contains("mode") ? pipeline_mode_from_string(j["mode"].get<std::string>()) : c.mode;
      c = PipelineConfig::for_preset(track_preset_from_string(j["preset"].get<std::string>()), mode);
    }
    if (j.contains("mode")) c.mode = pipeline_mode_from_string(j["mode"].get<std::string>());
    c.m_votes = j.value("m_votes", c.m_votes);
    c.batch_trigger = j.value("batch_trigger", c.batch_trigger);
    c.w_binary = j.value("w_binary", c.w_binary);
    c.w_opd = j.value("w_opd", c.w_opd);
    c.max_staleness = j.value("max_staleness", c.max_staleness);
    c.trainer.lr = j.value("lr", c.trainer.lr);
    c.trainer.kl_coef = j.value("kl_coef", c.trainer.kl_coef);
    c.trainer.eps_low = j.value("eps_low", c.trainer.eps_low);
    c.trainer.eps_high = j.value("eps_high", c.trainer.eps_high);
    if (j.contains("optimizer")) {
      const auto o = j["optimizer"].get<std::string>();
      if (o != "sgd" && o != "adam") throw Error(Errc::invalid_argument, "optimizer must be sgd or adam");
      c.trainer.optimizer = o == "sgd" ? OptimizerKind::sgd : OptimizerKind::adam;
    }
    c.integrated_reward = j.value("integrated_reward", c.integrated_reward);
    c.rollouts_per_task = j.value("rollouts_per_task", c.rollouts_per_task);
    c.rule_set = j.value("rule_set", c.rule_set);
    c.unclear_negative = j.value("unclear_negative", c.unclear_negative);
    c.step_accuracy = j.value("step_accuracy", c.step_accuracy);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  c.trainer.batch_trigger = c.batch_trigger;
  c.trainer.max_staleness = c.max_staleness;
  return c;
}

// ---- per-turn pipelines -------------------------------------------------------

JudgeRequest judge_request(const JudgeJob& job) {
  if (!job.turn.next_state) throw Error(Errc::invalid_argument, "turn has no next state");
  return {job.turn.request, job.turn.response_text, job.turn.response_tokens, *job.turn.next_state};
}

namespace {

constexpr std::uint64_t kOpdSalt = 0x0bd5a17ULL;

Sample make_sample(const JudgeJob& job, AdvantageVector adv) {
  Sample s;
  s.session_id = job.session_id;
  s.turn_index = job.turn.index;
  s.prompt_tokens = job.turn.prompt_tokens;
  s.response_tokens = job.turn.response_tokens;
  s.old_log_probs = job.turn.old_log_probs;
  s.advantage = std::move(adv.values);
  s.policy_version = job.turn.policy_version;
  s.source = adv.source;
  return s;
}

std::vector<int> scores_of(const std::vector<JudgeVerdict>& votes) {
  std::vector<int> out;
  for (const auto& v : votes) out.push_back(v.score);
  return out;
}

// Teacher log-probs of the original response under the hint-enhanced context.
std::optional<std::vector<double>> teacher_scores(const JudgeJob& job, const std::string& hint,
                                                  const PolicyParams& teacher, const Vocabulary& vocab) {
  std::vector<Message> enhanced;
  try {
    enhanced = build_enhanced_context(job.turn.request, hint);
  } catch (const Error& e) {
    if (e.code() == Errc::no_user_message) return std::nullopt;
    throw;
  }
  const auto prompt = render_generation_prompt(vocab, enhanced);
  return log_probs_forced(teacher, prompt, job.turn.response_tokens);
}

}  // namespace

PipelineOutcome run_binary_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed) {
  PipelineOutcome out;
  out.binary_votes = judge_turn(judge_request(job), m, backend, JudgeMode::binary, seed);
  const auto scores = scores_of(out.binary_votes);
  out.r = majority_vote(scores);
  out.sample = make_sample(job, binary_advantage(*out.r, job.turn.response_tokens.size()));
  return out;
}

PipelineOutcome run_opd_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed,
                                 const PolicyParams* teacher, const Vocabulary& vocab) {
  PipelineOutcome out;
  out.opd_votes = judge_turn(judge_request(job), m, backend, JudgeMode::opd, seed ^ kOpdSalt);
  out.hint = select_hint(out.opd_votes);
  if (!out.hint) {
    out.drop_reason = "no_valid_hint";
    return out;
  }
  if (!teacher) {
    out.drop_reason = "snapshot_evicted";
    return out;
  }
  auto t = teacher_scores(job, *out.hint, *teacher, vocab);
  if (!t) {
    out.drop_reason = "no_user_message";
    return out;
  }
  out.teacher_log_probs = std::move(*t);
  out.sample = make_sample(job, opd_advantage(out.teacher_log_probs, job.turn.old_log_probs));
  return out;
}

PipelineOutcome run_combined_pipeline(const JudgeJob& job, JudgeBackend& backend, int m, std::uint64_t seed,
                                      const PolicyParams* teacher, const Vocabulary& vocab, double w_binary,
                                      double w_opd) {
  PipelineOutcome out;
  const JudgeRequest req = judge_request(job);
  out.binary_votes = judge_turn(req, m, backend, JudgeMode::binary, seed);
  out.opd_votes = judge_turn(req, m, backend, JudgeMode::opd, seed ^ kOpdSalt);
  out.r = majority_vote(scores_of(out.binary_votes));
  out.hint = select_hint(out.opd_votes);
  if (out.hint && teacher) {
    if (auto t = teacher_scores(job, *out.hint, *teacher, vocab)) {
      out.teacher_log_probs = std::move(*t);
      out.sample = make_sample(
          job, combined_advantage(*out.r, out.teacher_log_probs, job.turn.old_log_probs, w_binary, w_opd));
      return out;
    }
  }
  out.sample = make_sample(job, binary_advantage(*out.r, job.turn.response_tokens.size()));
  return out;
}

// ---- batch assembly -----------------------------------------------------------

std::vector<GuaranteeDecision> at_least_one_guarantee(std::span<const Sample> window, std::vector<Sample>& batch) {
  std::vector<std::string> order;
  std::map<std::string, const Sample*> latest;
  std::set<std::string> effective;
  for (const Sample& s : window) {
    if (!latest.count(s.session_id)) order.push_back(s.session_id);
    auto& slot = latest[s.session_id];
    if (!slot || s.turn_index >= slot->turn_index) slot = &s;
    if (s.effective()) effective.insert(s.session_id);
  }
  std::vector<GuaranteeDecision> applied;
  for (const auto& id : order) {
    if (effective.count(id)) continue;
    const Sample* s = latest[id];
    batch.push_back(*s);
    applied.push_back({id, s->turn_index});
  }
  return applied;
}

BatchPlan assemble_batch(std::vector<Sample> window, std::uint64_t current_version, int max_staleness) {
  BatchPlan plan;
  std::vector<Sample> fresh;
  for (Sample& s : window) {
    if (current_version > s.policy_version + static_cast<std::uint64_t>(max_staleness)) {
      plan.stale.push_back(std::move(s));
    } else {
      fresh.push_back(std::move(s));
    }
  }
  for (const Sample& s : fresh) {
    if (s.effective()) plan.batch.push_back(s);
  }
  plan.guaranteed = at_least_one_guarantee(fresh, plan.batch);
  for (const Sample& s : fresh) {
    if (s.effective()) continue;
    const bool kept = std::any_of(plan.guaranteed.begin(), plan.guaranteed.end(), [&](const GuaranteeDecision& g) {
      return g.session_id == s.session_id && g.turn_index == s.turn_index;
    });
    if (!kept) plan.masked.push_back(s);
  }
  return plan;
}

// ---- step-wise groups ---------------------------------------------------------

void StepAggregator::register_group(std::string task_id, std::vector<std::string> sessions) {
  std::lock_guard lock(mu_);
  for (const auto& s : sessions) rollouts_[s] = Rollout{task_id, {}, std::nullopt, 0.0};
  groups_[std::move(task_id)] = std::move(sessions);
}

std::optional<CompletedGroup> StepAggregator::add(const JudgeJob& job, std::vector<int> votes) {
  std::lock_guard lock(mu_);
  auto it = rollouts_.find(job.session_id);
  if (it == rollouts_.end()) throw Error(Errc::not_found, "session " + job.session_id + " belongs to no group");
  Rollout& r = it->second;
  r.steps[job.turn.index] = {job.turn, std::move(votes)};
  if (job.final_turn) {
    r.length = job.turn.index + 1;
    r.outcome = job.outcome.value_or(0.0);
  }
  return try_complete(r.task_id);
}

std::optional<CompletedGroup> StepAggregator::try_complete(const std::string& task_id) {
  const auto& sessions = groups_.at(task_id);
  for (const auto& s : sessions) {
    const Rollout& r = rollouts_.at(s);
    if (!r.length || static_cast<int>(r.steps.size()) != *r.length) return std::nullopt;
  }
  CompletedGroup g;
  g.task_id = task_id;
  g.sessions = sessions;
  for (const auto& s : sessions) {
    Rollout& r = rollouts_.at(s);
    std::vector<Turn> turns;
    std::vector<std::vector<int>> votes;
    for (auto& [index, step] : r.steps) {
      turns.push_back(std::move(step.first));
      votes.push_back(std::move(step.second));
    }
    g.turns.push_back(std::move(turns));
    g.votes.push_back(std::move(votes));
    g.outcomes.push_back(r.outcome);
    rollouts_.erase(s);
  }
  groups_.erase(task_id);
  return g;
}

std::size_t StepAggregator::open_groups() const {
  std::lock_guard lock(mu_);
  return groups_.size();
}

GroupSamples group_samples(const CompletedGroup& group, bool integrated) {
  GroupSamples out;
  if (integrated) {
    out.table = StepRewardTable::integrated(group.task_id, group.outcomes, group.votes);
  } else {
    std::vector<std::size_t> lengths;
    for (const auto& t : group.turns) lengths.push_back(t.size());
    out.table = StepRewardTable::outcome_only(group.task_id, group.outcomes, lengths);
  }
  out.advantages = step_index_group_advantage(out.table);
  for (std::size_t g = 0; g < group.turns.size(); ++g) {
    for (std::size_t t = 0; t < group.turns[g].size(); ++t) {
      const Turn& turn = group.turns[g][t];
      Sample s;
      s.session_id = group.sessions[g];
      s.turn_index = turn.index;
      s.prompt_tokens = turn.prompt_tokens;
      s.response_tokens = turn.response_tokens;
      s.old_log_probs = turn.old_log_probs;
      s.advantage.assign(turn.response_tokens.size(), out.advantages[g][t]);
      s.policy_version = turn.policy_version;
      s.source = SampleSource::stepwise;
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

// ---- summary ------------------------------------------------------------------

json RunSummary::to_json() const {
  json scores_json = json::array();
  for (const auto& p : scores) {
    scores_json.push_back({{"updates", p.updates}, {"policy_version", p.version}, {"score", p.score}});
  }
  return {{"config", nextsig::to_json(config)},
          {"seed", seed},
          {"updates", updates},
          {"final_version", final_version},
          {"rounds", rounds},
          {"totals",
           {{"turns_judged", totals.turns_judged},
            {"submitted", totals.submitted},
            {"trained", totals.trained},
            {"in_batch", totals.in_batch},
            {"masked", totals.masked},
            {"dropped_stale", totals.dropped_stale},
            {"guarantees", totals.guarantees},
            {"requeued", totals.requeued},
            {"dropped", totals.dropped},
            {"by_source", totals.by_source}}},
          {"scores", scores_json},
          {"runtime_s", runtime_s},
          {"stop_reason", stop_reason}};
}

std::string RunSummary::scores_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "updates,policy_version,score\n";
  for (const auto& p : scores) out << p.updates << ',' << p.version << ',' << p.score << '\n';
  return out.str();
}

// ---- orchestrator ---------------------------------------------------------------

namespace {

TrainerConfig synced_trainer_config(const PipelineConfig& c) {
  TrainerConfig t = c.trainer;
  t.batch_trigger = c.batch_trigger;
  t.max_staleness = c.max_staleness;
  return t;
}

}  // namespace

Orchestrator::Orchestrator(PipelineConfig config, WorldSpec world, OrchestratorOptions options)
    : config_(std::move(config)),
      world_(std::move(world)),
      options_(std::move(options)),
      vocab_(Vocabulary::standard()),
      task_(world_.task()),
      trainer_(synced_trainer_config(config_)) {
  config_.validate();
  if (config_.mode == PipelineMode::stepwise && world_.kind != WorldSpec::Kind::toy_task) {
    throw Error(Errc::invalid_argument, "stepwise mode needs a toy_task world");
  }
  if (config_.mode != PipelineMode::stepwise && world_.kind != WorldSpec::Kind::persona) {
    throw Error(Errc::invalid_argument, "binary/opd/combined modes need a persona world");
  }
  register_world_rules(registry_, world_.persona, config_.unclear_negative, config_.step_accuracy);
  judge_ = std::make_unique<ScriptedJudge>(registry_, config_.rule_set);

  const PolicyParams& base =
      world_.kind == WorldSpec::Kind::persona ? persona_base_policy(world_.persona) : toy_base_policy(task_);
  snapshots_ = std::make_unique<SnapshotStore>(base);
  recorder_ = std::make_unique<Recorder>(RecorderConfig{options_.record_dir, options_.archive, 65536},
                                         snapshots_->current_version());
  gateway_ = std::make_unique<Gateway>(GatewayConfig{{options_.api_key}, std::chrono::hours(1)}, *snapshots_, vocab_,
                                       judge_queue_, recorder_.get());
  summary_.config = config_;
  summary_.seed = options_.seed;
}

Orchestrator::~Orchestrator() {
  stop_services();
  if (recorder_) recorder_->flush();
}

std::uint64_t Orchestrator::job_seed(const JudgeJob& job) const {
  const auto turn = static_cast<std::uint64_t>(job.turn.index);
  return mix64(options_.seed ^ mix64(stable_hash(job.session_id) ^ turn * 0x9e37ULL));
}

void Orchestrator::record_votes(const JudgeJob& job, JudgeMode mode, const std::vector<JudgeVerdict>& votes) {
  json arr = json::array();
  for (const auto& v : votes) {
    json jv{{"score", v.score}, {"raw", v.raw_text}};
    if (v.hint) jv["hint"] = *v.hint;
    arr.push_back(std::move(jv));
  }
  recorder_->record(EventKind::judge_vote, job.session_id, job.turn.index,
                    {{"mode", to_string(mode)}, {"votes", arr}, {"m", config_.m_votes},
                     {"next_state", job.turn.next_state.value_or("")}});
}

void Orchestrator::submit(Sample sample, json extra) {
  validate(sample);
  json payload = extra.is_object() ? std::move(extra) : json::object();
  payload["source"] = to_string(sample.source);
  payload["advantage"] = sample.advantage;
  payload["policy_version"] = sample.policy_version;
  payload["response_tokens"] = sample.response_tokens;
  payload["old_log_probs"] = sample.old_log_probs;
  recorder_->record(EventKind::sample_submitted, sample.session_id, sample.turn_index, std::move(payload));
  {
    std::lock_guard lock(summary_mu_);
    ++summary_.totals.submitted;
    ++summary_.totals.by_source[to_string(sample.source)];
  }
  std::lock_guard lock(samples_mu_);
  pending_.push_back(std::move(sample));
}

void Orchestrator::drop(const std::string& session_id, int turn_index, const std::string& reason, json extra) {
  json payload = extra.is_object() ? std::move(extra) : json::object();
  payload["reason"] = reason;
  recorder_->record(EventKind::sample_dropped, session_id, turn_index, std::move(payload));
  std::lock_guard lock(summary_mu_);
  ++summary_.totals.dropped[reason];
}

void Orchestrator::process(JudgeJob job) {
  const std::uint64_t seed = job_seed(job);
  try {
    if (config_.mode == PipelineMode::stepwise) {
      const auto votes = judge_turn(judge_request(job), config_.m_votes, *judge_, JudgeMode::binary, seed);
      record_votes(job, JudgeMode::binary, votes);
      {
        std::lock_guard lock(summary_mu_);
        ++summary_.totals.turns_judged;
      }
      std::optional<CompletedGroup> group;
      try {
        group = aggregator_.add(job, scores_of(votes));
      } catch (const Error& e) {
        if (e.code() != Errc::not_found) throw;
        drop(job.session_id, job.turn.index, "no_group");
        return;
      }
      if (!group) return;
      const GroupSamples gs = group_samples(*group, config_.integrated_reward);
      std::size_t k = 0;
      for (std::size_t g = 0; g < group->turns.size(); ++g) {
        for (std::size_t t = 0; t < group->turns[g].size(); ++t) {
          submit(gs.samples[k++], {{"task_id", group->task_id},
                                   {"rewards", gs.table.rewards},
                                   {"rollout", g},
                                   {"step", t},
                                   {"integrated", config_.integrated_reward},
                                   {"votes", group->votes[g][t]},
                                   {"outcome", group->outcomes[g]}});
        }
      }
      return;
    }

    PipelineOutcome out;
    std::shared_ptr<const PolicyParams> teacher;
    if (config_.mode != PipelineMode::binary) teacher = snapshots_->at(job.turn.policy_version);
    switch (config_.mode) {
      case PipelineMode::binary:
        out = run_binary_pipeline(job, *judge_, config_.m_votes, seed);
        break;
      case PipelineMode::opd:
        out = run_opd_pipeline(job, *judge_, config_.m_votes, seed, teacher.get(), vocab_);
        break;
      default:
        out = run_combined_pipeline(job, *judge_, config_.m_votes, seed, teacher.get(), vocab_, config_.w_binary,
                                    config_.w_opd);
        break;
    }
    if (!out.binary_votes.empty()) record_votes(job, JudgeMode::binary, out.binary_votes);
    if (config_.mode != PipelineMode::binary) record_votes(job, JudgeMode::opd, out.opd_votes);
    if (out.hint) recorder_->record(EventKind::hint_selected, job.session_id, job.turn.index, {{"hint", *out.hint}});
    {
      std::lock_guard lock(summary_mu_);
      ++summary_.totals.turns_judged;
    }
    if (!out.sample) {
      drop(job.session_id, job.turn.index, out.drop_reason.value_or("unknown"));
      return;
    }
    json extra;
    if (out.r) {
      extra["votes"] = scores_of(out.binary_votes);
      extra["r"] = *out.r;
    }
    if (out.hint) extra["hint"] = *out.hint;
    if (!out.teacher_log_probs.empty()) extra["teacher_log_probs"] = out.teacher_log_probs;
    if (out.sample->source == SampleSource::combined) {
      extra["w_binary"] = config_.w_binary;
      extra["w_opd"] = config_.w_opd;
    }
    submit(std::move(*out.sample), std::move(extra));
  } catch (const Error& e) {
    if (e.code() == Errc::backend_unavailable && job.attempts + 1 < 5) {
      ++job.attempts;
      {
        std::lock_guard lock(summary_mu_);
        ++summary_.totals.requeued;
      }
      judge_queue_.push(std::move(job));
      return;
    }
    drop(job.session_id, job.turn.index, to_string(e.code()), {{"message", e.what()}});
  }
}

bool Orchestrator::judge_once() {
  auto job = judge_queue_.try_pop();
  if (!job) return false;
  process(std::move(*job));
  return true;
}

std::size_t Orchestrator::pending_samples() const {
  std::lock_guard lock(samples_mu_);
  return pending_.size();
}

std::optional<TrainReport> Orchestrator::train_if_ready() {
  std::lock_guard train_lock(train_mu_);
  std::vector<Sample> window;
  {
    std::lock_guard lock(samples_mu_);
    const auto trigger = static_cast<std::size_t>(config_.batch_trigger);
    if (pending_.size() < trigger) return std::nullopt;
    for (std::size_t i = 0; i < trigger; ++i) {
      window.push_back(std::move(pending_.front()));
      pending_.pop_front();
    }
  }
  const auto current = snapshots_->current();
  BatchPlan plan = assemble_batch(std::move(window), current->version, config_.max_staleness);
  for (const Sample& s : plan.stale) {
    drop(s.session_id, s.turn_index, "stale",
         {{"policy_version", s.policy_version}, {"current_version", current->version}});
  }
  for (const auto& g : plan.guaranteed) {
    recorder_->record(EventKind::guarantee_applied, g.session_id, g.turn_index, json::object());
  }
  {
    std::lock_guard lock(summary_mu_);
    auto& t = summary_.totals;
    t.trained += plan.batch.size() + plan.masked.size();
    t.in_batch += plan.batch.size();
    t.masked += plan.masked.size();
    t.dropped_stale += plan.stale.size();
    t.guarantees += plan.guaranteed.size();
  }
  if (plan.batch.empty()) return std::nullopt;

  TrainResult result = trainer_.step(*current, plan.batch);
  result.report.stale_samples = plan.stale.size();
  if (!result.params.all_finite()) throw Error(Errc::invalid_argument, "update produced non-finite parameters");
  auto next = std::make_shared<const PolicyParams>(std::move(result.params));
  gateway_->graceful_weight_swap(next);
  if (next->version > 16) snapshots_->prune_before(next->version - 16);

  json keys = json::array();
  for (const Sample& s : plan.batch) keys.push_back({s.session_id, s.turn_index});
  json masked_keys = json::array();
  for (const Sample& s : plan.masked) masked_keys.push_back({s.session_id, s.turn_index});
  const TrainReport& r = result.report;
  recorder_->record(EventKind::train_report, std::nullopt, std::nullopt,
                    {{"new_version", r.new_version},
                     {"samples_used", r.samples_used},
                     {"masked", plan.masked.size()},
                     {"stale", plan.stale.size()},
                     {"guaranteed", plan.guaranteed.size()},
                     {"loss_pg", r.loss_pg},
                     {"loss_kl", r.loss_kl},
                     {"ratio_mean", r.ratio_mean},
                     {"ratio_min", r.ratio_min},
                     {"ratio_max", r.ratio_max},
                     {"clipped_fraction", r.clipped_fraction},
                     {"batch", keys},
                     {"masked_keys", masked_keys}});
  int updates = 0;
  {
    std::lock_guard lock(summary_mu_);
    updates = ++updates_;
  }
  note_score(updates, *next);
  return result.report;
}

void Orchestrator::train_until_idle() {
  while (pending_samples() >= static_cast<std::size_t>(config_.batch_trigger)) train_if_ready();
}

void Orchestrator::note_score(int updates, const PolicyParams& params) {
  const double score = evaluate(params);
  std::lock_guard lock(summary_mu_);
  summary_.scores.push_back({updates, params.version, score});
}

double Orchestrator::evaluate(const PolicyParams& params) const {
  if (world_.kind == WorldSpec::Kind::persona) {
    const auto problems = eval_problems(options_.eval_seed, options_.eval_problems);
    const std::vector<Message> prefix{{Role::system, world_.persona.system_prompt}};
    double total = 0.0;
    for (std::size_t i = 0; i < problems.size(); ++i) {
      std::vector<Message> ctx = prefix;
      ctx.push_back({Role::user, homework_prompt(problems[i])});
      const auto prompt = render_generation_prompt(vocab_, ctx);
      const auto gen = sample(params, prompt, world_.temperature, world_.max_len,
                              mix64(options_.eval_seed * 0x100000001b3ULL + i), vocab_.eos());
      total += personalization_score(world_.persona, vocab_, problems[i], gen.tokens);
    }
    return problems.empty() ? 0.0 : total / static_cast<double>(problems.size());
  }

  double successes = 0.0;
  for (std::size_t e = 0; e < options_.eval_episodes; ++e) {
    ToyState state;
    std::vector<Message> messages{{Role::tool, toy_task_prompt(task_)}};
    while (!state.done) {
      const auto prompt = render_generation_prompt(vocab_, messages);
      const std::uint64_t seed = mix64(options_.eval_seed ^ mix64(e * 131 + static_cast<std::uint64_t>(state.steps)));
      const auto gen = sample(params, prompt, world_.temperature, world_.max_len, seed, vocab_.eos());
      const auto out = toy_env_step(task_, state, gen.tokens, vocab_);
      state = out.state;
      messages.clear();
      const std::string text = vocab_.decode(gen.tokens);
      if (!text.empty()) messages.push_back({Role::assistant, text});
      messages.push_back({Role::tool, out.next_state});
    }
    successes += toy_env_outcome(task_, state);
  }
  return options_.eval_episodes == 0 ? 0.0 : successes / static_cast<double>(options_.eval_episodes);
}

RunSummary Orchestrator::run_lockstep(int updates) { return drive(updates, options_.max_rounds); }

RunSummary Orchestrator::run_rounds(std::size_t rounds) { return drive(-1, rounds); }

RunSummary Orchestrator::drive(int target_updates, std::size_t max_rounds) {
  const auto started = std::chrono::steady_clock::now();
  bool need_baseline = false;
  {
    std::lock_guard lock(summary_mu_);
    need_baseline = summary_.scores.empty();
  }
  if (need_baseline) note_score(0, *snapshots_->current());

  auto transport = std::make_shared<InProcessTransport>(*gateway_);
  const GenerationParams gen{world_.max_len, world_.temperature, std::nullopt};
  const auto done = [&] {
    std::lock_guard lock(summary_mu_);
    return target_updates >= 0 && updates_ >= target_updates;
  };
  const auto settle = [&] {
    while (judge_once()) train_until_idle();
    train_until_idle();
  };

  std::size_t rounds = 0;
  if (world_.kind == WorldSpec::Kind::persona) {
    std::vector<PersonaClient> clients;
    for (const auto& inst : spawn_parallel(world_, options_.clients, "s" + std::to_string(options_.seed))) {
      clients.emplace_back(world_.persona, vocab_, GatewayClient(transport, options_.api_key), inst.session_id,
                           mix64(inst.seed ^ options_.seed), gen);
    }
    while (!done() && rounds < max_rounds) {
      for (auto& c : clients) {
        c.step();
        settle();
        if (done()) break;
      }
      ++rounds;
    }
  } else {
    GatewayClient client(transport, options_.api_key);
    while (!done() && rounds < max_rounds) {
      const std::string task_id = "g" + std::to_string(options_.seed) + "-" + std::to_string(rounds);
      std::vector<std::string> sessions;
      for (int i = 0; i < config_.rollouts_per_task; ++i) sessions.push_back(task_id + "-r" + std::to_string(i));
      if (config_.mode == PipelineMode::stepwise) aggregator_.register_group(task_id, sessions);
      for (const auto& sid : sessions) {
        run_toy_episode(client, task_, vocab_, sid, gen);
        settle();
      }
      ++rounds;
    }
  }
  recorder_->flush();

  const bool reached = done();
  std::lock_guard lock(summary_mu_);
  summary_.rounds += rounds;
  summary_.runtime_s += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  summary_.stop_reason = reached ? "updates_reached" : "round_limit";
  summary_.updates = updates_;
  summary_.final_version = snapshots_->current_version();
  return summary_;
}

int Orchestrator::start_services(bool http, std::size_t judge_workers, const std::string& host, int port_wanted) {
  stop_ = false;
  int port = 0;
  if (http) {
    server_ = std::make_unique<GatewayServer>(*gateway_);
    port = server_->start(host, port_wanted);
  }
  for (std::size_t i = 0; i < judge_workers; ++i) {
    threads_.emplace_back([this] {
      while (!stop_) {
        if (judges_paused_) {
          std::this_thread::sleep_for(std::chrono::milliseconds(2));
          continue;
        }
        auto job = judge_queue_.pop_wait(std::chrono::milliseconds(20));
        if (job) process(std::move(*job));
      }
    });
  }
  threads_.emplace_back([this] {
    // Training yields the core to serving and judging whenever they have work.
    sched_param param{};
    pthread_setschedparam(pthread_self(), SCHED_IDLE, &param);
    while (!stop_) {
      if (const auto ms = stall_ms_.exchange(0); ms > 0) {
        std::lock_guard lock(train_mu_);
        const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(ms);
        while (!stop_ && std::chrono::steady_clock::now() < until) {
        }
        continue;
      }
      if (trainer_paused_ || !train_if_ready()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  });
  return port;
}

void Orchestrator::stop_services() {
  stop_ = true;
  if (server_) server_->stop();
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
  server_.reset();
}

void Orchestrator::pause_trainer() { trainer_paused_ = true; }
void Orchestrator::resume_trainer() { trainer_paused_ = false; }
void Orchestrator::pause_judges() { judges_paused_ = true; }
void Orchestrator::resume_judges() { judges_paused_ = false; }
void Orchestrator::stall_trainer(std::chrono::milliseconds busy) { stall_ms_ = busy.count(); }

RunSummary Orchestrator::summary() const {
  std::lock_guard lock(summary_mu_);
  RunSummary s = summary_;
  s.updates = updates_;
  s.final_version = snapshots_->current_version();
  return s;
}

}  // namespace nextsig

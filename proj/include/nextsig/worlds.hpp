// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nextsig/client.hpp"
#include "nextsig/core.hpp"
#include "nextsig/judge.hpp"
#include "nextsig/policy.hpp"
#include "nextsig/rng.hpp"
#include "nextsig/vocab.hpp"

namespace nextsig {

// ---- personas --------------------------------------------------------------

// One decidable surface rule over the decoded response words.
struct SubPreference {
  std::string name;
  std::vector<std::string> forbidden;     // none of these may appear
  std::vector<std::string> required_any;  // at least one must appear (when non-empty)
  std::optional<int> max_words;           // length bound, <eos> excluded
  std::string directive;                  // correction naming the rule

  bool satisfied_by(std::span<const std::string> words) const;
};

struct Persona {
  std::string id;
  std::string system_prompt;
  std::vector<SubPreference> rules;
  std::vector<std::string> approvals;
  std::vector<std::string> complaints;
  double p_directive = 0.5;

  static Persona student();
  static Persona teacher();
};

nlohmann::json to_json(const Persona& p);
Persona persona_from_json(const nlohmann::json& j);  // throws parse_error

std::vector<std::string> response_words(const Vocabulary& vocab, std::span<const TokenId> tokens);

// satisfied[i] for persona.rules[i].
std::vector<bool> check_preferences(const Persona& persona, const Vocabulary& vocab, std::span<const TokenId> response);

struct HomeworkProblem {
  int a = 0;
  int b = 0;
  std::string op;  // plus, minus, times

  int answer_digit() const;  // result mod 10
  bool operator==(const HomeworkProblem&) const = default;
};

HomeworkProblem random_problem(CounterRng& rng);
std::string homework_prompt(const HomeworkProblem& p);
// The fixed evaluation window: `count` problems drawn from `seed`.
std::vector<HomeworkProblem> eval_problems(std::uint64_t seed, std::size_t count = 36);

struct PersonaReply {
  Message message;  // reaction line, newline, next task prompt
  std::string reaction;
  bool satisfied = false;
  std::optional<std::size_t> violated_rule;  // first violated rule
  bool directive = false;
  HomeworkProblem next_problem;
};

// Reacts to a response and poses the next problem.
PersonaReply persona_step(const Persona& persona, const Vocabulary& vocab, std::span<const Message> history,
                          std::span<const TokenId> response, CounterRng& rng);

// Fraction of satisfied sub-preferences snapped to {0, 0.25, 0.5, 0.75, 1}.
double personalization_score(const Persona& persona, const Vocabulary& vocab, const HomeworkProblem& problem,
                             std::span<const TokenId> first_response);

double snap_score(double fraction);

// ---- toy multi-step task ---------------------------------------------------

struct ToyTask {
  std::string id;
  int horizon = 4;
  int branching = 4;
  std::vector<int> targets;  // correct action per progress level
  int max_steps = 4;

  void validate() const;
};

ToyTask make_toy_task(std::string id, int horizon, int branching, std::uint64_t seed,
                      std::optional<int> max_steps = {});

struct StepRecord {
  int step = 0;
  std::optional<int> action;  // nullopt when the response is not a valid action
  bool correct = false;
  int progress_after = 0;
  std::string next_state;

  bool operator==(const StepRecord&) const = default;
};

struct ToyState {
  int progress = 0;
  int steps = 0;
  bool done = false;
  std::vector<StepRecord> trajectory;

  bool operator==(const ToyState&) const = default;
};

struct StepOutput {
  ToyState state;
  std::string next_state;
  bool done = false;
  StepRecord record;
};

std::string toy_task_prompt(const ToyTask& task);
std::optional<int> parse_action(const Vocabulary& vocab, std::span<const TokenId> action_tokens, int branching);

// Pure transition. Throws episode_finished once done.
StepOutput toy_env_step(const ToyTask& task, const ToyState& state, std::span<const TokenId> action_tokens,
                        const Vocabulary& vocab);

// 1 iff every target step was achieved.
int toy_env_outcome(const ToyTask& task, const ToyState& state);

// ---- scripted judges -------------------------------------------------------

// persona_reply: reads the persona's reaction line (approval +1, directive -1
// and in opd mode +1 with the directive as hint, anything else an uncertain
// estimate). persona_truth: scores the response against the persona's rules
// directly. toy_step: reads the environment marker, right with probability
// `step_accuracy`.
void register_world_rules(RuleSetRegistry& registry, const Persona& persona, double unclear_negative = 0.3,
                          double step_accuracy = 0.9);

// ---- pretraining -----------------------------------------------------------

struct CorpusEntry {
  std::vector<Message> context;
  std::string response;
};

// Maximum-likelihood fit of a fresh k-gram policy to the corpus (Adam on the
// mean token NLL).
PolicyParams pretrain_policy(const Vocabulary& vocab, std::span<const CorpusEntry> corpus, int steps = 150,
                             double lr = 0.1, std::size_t context = 2);

// Task prompts mostly answered in a structured style; hinted prompts answered
// in a style that honors the hint.
std::vector<CorpusEntry> persona_corpus(const Persona& persona, std::uint64_t seed);
// Uniform over the task's actions at every progress level.
std::vector<CorpusEntry> toy_corpus(const ToyTask& task);

// Cached base policies (version 0).
const PolicyParams& persona_base_policy(const Persona& persona);
const PolicyParams& toy_base_policy(const ToyTask& task);

// ---- world instances and clients -------------------------------------------

struct WorldSpec {
  enum class Kind { persona, toy_task };
  Kind kind = Kind::persona;
  Persona persona = Persona::student();
  int horizon = 4;
  int branching = 4;
  std::uint64_t task_seed = 7;
  std::uint64_t seed = 1;
  int max_len = 12;
  double temperature = 1.0;

  ToyTask task() const;
};

nlohmann::json to_json(const WorldSpec& spec);
WorldSpec world_spec_from_json(const nlohmann::json& j);
WorldSpec load_world_spec(const std::filesystem::path& path);

// Simulated user driving one conversation through the gateway.
class PersonaClient {
 public:
  PersonaClient(const Persona& persona, const Vocabulary& vocab, GatewayClient client, std::string session_id,
                std::uint64_t seed, GenerationParams generation = {});

  // One exchange: sends the pending user message, reacts to the answer.
  PersonaReply step();
  void close();

  const std::string& session_id() const { return session_id_; }
  int turns() const { return turns_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  Persona persona_;
  const Vocabulary& vocab_;
  GatewayClient client_;
  std::string session_id_;
  CounterRng rng_;
  GenerationParams generation_;
  std::vector<Message> prefix_;  // system prompt
  Message pending_;              // next user message
  Message asked_;                // user message the last response answered
  std::string last_response_;
  bool started_ = false;
  int turns_ = 0;
  std::vector<double> scores_;
  HomeworkProblem problem_;
};

struct EpisodeResult {
  std::string session_id;
  int outcome = 0;
  ToyState state;
};

// Plays one toy-task episode through the gateway and closes the session with
// the verifier outcome.
EpisodeResult run_toy_episode(GatewayClient& client, const ToyTask& task, const Vocabulary& vocab,
                              const std::string& session_id, const GenerationParams& generation);

// n isolated instances with independent random streams split from spec.seed.
struct WorldInstance {
  std::size_t index = 0;
  std::string session_id;
  std::uint64_t seed = 0;
};

std::vector<WorldInstance> spawn_parallel(const WorldSpec& spec, std::size_t n, const std::string& prefix = "w");

}  // namespace nextsig

// Copyright (C) 2026 The nextsig Authors
// SPDX-License-Identifier: Apache-2.0

#include "nextsig/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>

#include "nextsig/advantage.hpp"
#include "nextsig/error.hpp"

namespace nextsig {

using nlohmann::json;

// ---- personas --------------------------------------------------------------

bool SubPreference::satisfied_by(std::span<const std::string> words) const {
  for (const auto& w : words) {
    if (std::find(forbidden.begin(), forbidden.end(), w) != forbidden.end()) return false;
  }
  if (!required_any.empty()) {
    const bool found = std::any_of(words.begin(), words.end(), [&](const std::string& w) {
      return std::find(required_any.begin(), required_any.end(), w) != required_any.end();
    });
    if (!found) return false;
  }
  if (max_words && static_cast<int>(words.size()) > *max_words) return false;
  return true;
}

Persona Persona::student() {
  Persona p;
  p.id = "student";
  p.system_prompt = "i am a student please solve my task";
  p.rules = {
      {"no_bold", {"**", "bold"}, {}, std::nullopt, "dont use bold stars"},
      {"no_structure", {"step", "1.", "2.", "#", "answer:", "therefore"}, {}, std::nullopt, "dont use steps"},
      {"short", {}, {}, 6, "too long keep it short"},
      {"casual", {}, {"so", "yeah", "basically", "i"}, std::nullopt, "keep it casual"},
  };
  p.approvals = {"ok thanks", "thanks good", "good thanks"};
  p.complaints = {"hmm", "hmm no", "no"};
  p.p_directive = 0.5;
  return p;
}

Persona Persona::teacher() {
  Persona p;
  p.id = "teacher";
  p.system_prompt = "i am a teacher please solve my task";
  p.rules = {
      {"friendly", {}, {"great", "nice", "good", "well"}, std::nullopt, "please keep it nice"},
      {"specific", {}, {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9"}, std::nullopt, "please keep the answer"},
      {"no_bold", {"**", "bold"}, {}, std::nullopt, "dont use bold stars"},
  };
  p.approvals = {"great thanks", "nice thanks"};
  p.complaints = {"hmm", "no"};
  p.p_directive = 0.5;
  return p;
}

json to_json(const Persona& p) {
  json rules = json::array();
  for (const auto& r : p.rules) {
    json jr{{"name", r.name}, {"forbidden", r.forbidden}, {"required_any", r.required_any}, {"directive", r.directive}};
    if (r.max_words) jr["max_words"] = *r.max_words;
    rules.push_back(std::move(jr));
  }
  return {{"id", p.id},         {"system_prompt", p.system_prompt}, {"rules", rules},
          {"approvals", p.approvals}, {"complaints", p.complaints},     {"p_directive", p.p_directive}};
}

Persona persona_from_json(const json& j) {
  try {
    if (j.is_string()) {
      const auto name = j.get<std::string>();
      if (name == "student") return Persona::student();
      if (name == "teacher") return Persona::teacher();
      throw Error(Errc::parse_error, "unknown persona '" + name + "'");
    }
    Persona p;
    p.id = j.at("id").get<std::string>();
    p.system_prompt = j.value("system_prompt", std::string("please solve my task"));
    for (const auto& jr : j.at("rules")) {
      SubPreference r;
      r.name = jr.at("name").get<std::string>();
      r.forbidden = jr.value("forbidden", std::vector<std::string>{});
      r.required_any = jr.value("required_any", std::vector<std::string>{});
      if (jr.contains("max_words")) r.max_words = jr["max_words"].get<int>();
      r.directive = jr.at("directive").get<std::string>();
      p.rules.push_back(std::move(r));
    }
    p.approvals = j.at("approvals").get<std::vector<std::string>>();
    p.complaints = j.at("complaints").get<std::vector<std::string>>();
    p.p_directive = j.value("p_directive", 0.5);
    if (p.rules.empty() || p.approvals.empty() || p.complaints.empty()) {
      throw Error(Errc::parse_error, "persona needs rules, approvals and complaints");
    }
    if (p.p_directive < 0.0 || p.p_directive > 1.0) throw Error(Errc::parse_error, "p_directive outside [0, 1]");
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
}

std::vector<std::string> response_words(const Vocabulary& vocab, std::span<const TokenId> tokens) {
  std::vector<std::string> words;
  for (TokenId t : tokens) {
    if (t == vocab.eos() || t == vocab.bos()) continue;
    words.push_back(vocab.word(t));
  }
  return words;
}

std::vector<bool> check_preferences(const Persona& persona, const Vocabulary& vocab,
                                    std::span<const TokenId> response) {
  const auto words = response_words(vocab, response);
  std::vector<bool> out;
  for (const auto& rule : persona.rules) out.push_back(rule.satisfied_by(words));
  return out;
}

int HomeworkProblem::answer_digit() const {
  int r = 0;
  if (op == "plus") {
    r = a + b;
  } else if (op == "minus") {
    r = a - b;
  } else {
    r = a * b;
  }
  return ((r % 10) + 10) % 10;
}

HomeworkProblem random_problem(CounterRng& rng) {
  static const char* kOps[] = {"plus", "minus", "times"};
  HomeworkProblem p;
  p.a = static_cast<int>(rng.below(10));
  p.b = static_cast<int>(rng.below(10));
  p.op = kOps[rng.below(3)];
  return p;
}

std::string homework_prompt(const HomeworkProblem& p) {
  return "what " + std::to_string(p.a) + " " + p.op + " " + std::to_string(p.b) + " please solve";
}

std::vector<HomeworkProblem> eval_problems(std::uint64_t seed, std::size_t count) {
  CounterRng rng(mix64(seed ^ 0xe7a1ULL));
  std::vector<HomeworkProblem> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_problem(rng));
  return out;
}

PersonaReply persona_step(const Persona& persona, const Vocabulary& vocab, std::span<const Message> /*history*/,
                          std::span<const TokenId> response, CounterRng& rng) {
  PersonaReply reply;
  const auto sat = check_preferences(persona, vocab, response);
  const auto first_bad = std::find(sat.begin(), sat.end(), false);
  reply.satisfied = first_bad == sat.end();
  // Fixed number of draws per step keeps the stream aligned across outcomes.
  const double u_directive = rng.uniform();
  const std::uint64_t pick = rng.next_u64();
  if (reply.satisfied) {
    reply.reaction = persona.approvals[pick % persona.approvals.size()];
  } else {
    const auto v = static_cast<std::size_t>(first_bad - sat.begin());
    reply.violated_rule = v;
    reply.directive = u_directive < persona.p_directive;
    reply.reaction = reply.directive ? persona.rules[v].directive
                                     : persona.complaints[pick % persona.complaints.size()];
  }
  reply.next_problem = random_problem(rng);
  reply.message = {Role::user, reply.reaction + "\n" + homework_prompt(reply.next_problem)};
  return reply;
}

double snap_score(double fraction) {
  const double clamped = std::clamp(fraction, 0.0, 1.0);
  return std::round(clamped * 4.0) / 4.0;
}

double personalization_score(const Persona& persona, const Vocabulary& vocab, const HomeworkProblem& /*problem*/,
                             std::span<const TokenId> first_response) {
  const auto sat = check_preferences(persona, vocab, first_response);
  if (sat.empty()) return 1.0;
  const auto n = std::count(sat.begin(), sat.end(), true);
  return snap_score(static_cast<double>(n) / static_cast<double>(sat.size()));
}

// ---- toy multi-step task ---------------------------------------------------

void ToyTask::validate() const {
  if (horizon < 2) throw Error(Errc::invalid_argument, "horizon must be >= 2");
  if (branching < 2 || branching > 10) throw Error(Errc::invalid_argument, "branching must lie in [2, 10]");
  if (static_cast<int>(targets.size()) != horizon) throw Error(Errc::invalid_argument, "one target per step");
  for (int t : targets) {
    if (t < 0 || t >= branching) throw Error(Errc::invalid_argument, "target outside the action range");
  }
  if (max_steps < horizon) throw Error(Errc::invalid_argument, "max_steps must be >= horizon");
}

ToyTask make_toy_task(std::string id, int horizon, int branching, std::uint64_t seed, std::optional<int> max_steps) {
  ToyTask task;
  task.id = std::move(id);
  task.horizon = horizon;
  task.branching = branching;
  task.max_steps = max_steps.value_or(horizon);
  CounterRng rng(mix64(seed ^ 0x7a5cULL));
  for (int i = 0; i < horizon; ++i) {
    task.targets.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(branching))));
  }
  task.validate();
  return task;
}

std::string toy_task_prompt(const ToyTask& /*task*/) { return "task step 0"; }

std::optional<int> parse_action(const Vocabulary& vocab, std::span<const TokenId> action_tokens, int branching) {
  for (TokenId t : action_tokens) {
    if (t == vocab.bos()) continue;
    if (t == vocab.eos()) return std::nullopt;
    const std::string& w = vocab.word(t);
    if (w.size() == 1 && w[0] >= '0' && w[0] <= '9') {
      const int d = w[0] - '0';
      if (d < branching) return d;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

StepOutput toy_env_step(const ToyTask& task, const ToyState& state, std::span<const TokenId> action_tokens,
                        const Vocabulary& vocab) {
  if (state.done) throw Error(Errc::episode_finished, "task " + task.id + " already finished");
  StepOutput out;
  out.state = state;
  StepRecord& rec = out.record;
  rec.step = state.steps;
  rec.action = parse_action(vocab, action_tokens, task.branching);
  rec.correct = rec.action && *rec.action == task.targets[static_cast<std::size_t>(state.progress)];
  rec.progress_after = state.progress + (rec.correct ? 1 : 0);
  rec.next_state = std::string(rec.correct ? "ok" : "error") + " step " + std::to_string(rec.progress_after);

  out.state.progress = rec.progress_after;
  out.state.steps = state.steps + 1;
  out.state.done = out.state.progress == task.horizon || out.state.steps >= task.max_steps;
  out.state.trajectory.push_back(rec);
  out.next_state = rec.next_state;
  out.done = out.state.done;
  return out;
}

int toy_env_outcome(const ToyTask& task, const ToyState& state) { return state.progress >= task.horizon ? 1 : 0; }

// ---- scripted judges -------------------------------------------------------

namespace {

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

void register_world_rules(RuleSetRegistry& registry, const Persona& persona, double unclear_negative,
                          double step_accuracy) {
  registry.add("persona_reply", [persona, unclear_negative](const JudgeRequest& req, JudgeMode mode, CounterRng& rng) {
    const std::string reaction = first_line(req.next_state);
    const bool approved = std::find(persona.approvals.begin(), persona.approvals.end(), reaction) !=
                          persona.approvals.end();
    const bool directive = std::any_of(persona.rules.begin(), persona.rules.end(),
                                       [&](const SubPreference& r) { return r.directive == reaction; });
    if (mode == JudgeMode::opd) {
      if (directive) return "the user states how the reply should change " + format_verdict(1, reaction);
      return "no actionable correction " + format_verdict(-1);
    }
    if (approved) return "the user is satisfied " + format_verdict(1);
    if (directive) return "the user asks for a change " + format_verdict(-1);
    if (rng.bernoulli(unclear_negative)) return "the user sounds unhappy " + format_verdict(-1);
    return "the reaction is unclear " + format_verdict(0);
  });

  registry.add("persona_truth", [persona](const JudgeRequest& req, JudgeMode mode, CounterRng&) {
    const auto& vocab = Vocabulary::standard();
    const auto sat = check_preferences(persona, vocab, req.action_tokens);
    const auto bad = std::find(sat.begin(), sat.end(), false);
    if (mode == JudgeMode::opd) {
      if (bad == sat.end()) return format_verdict(-1);
      return format_verdict(1, persona.rules[static_cast<std::size_t>(bad - sat.begin())].directive);
    }
    return format_verdict(bad == sat.end() ? 1 : -1);
  });

  registry.add("toy_step", [step_accuracy](const JudgeRequest& req, JudgeMode mode, CounterRng& rng) {
    if (mode == JudgeMode::opd) return format_verdict(-1);
    const bool ok = req.next_state.rfind("ok", 0) == 0;
    const bool right = rng.bernoulli(step_accuracy);
    const int score = (ok == right) ? 1 : -1;
    return std::string(ok ? "the step succeeded " : "the step failed ") + format_verdict(score);
  });
}

// ---- pretraining -----------------------------------------------------------

PolicyParams pretrain_policy(const Vocabulary& vocab, std::span<const CorpusEntry> corpus, int steps, double lr,
                             std::size_t context) {
  if (corpus.empty()) throw Error(Errc::invalid_argument, "empty corpus");
  const std::size_t V = vocab.size();
  // Next-token counts per distinct k-token history: the NLL depends on nothing else.
  std::map<std::vector<TokenId>, std::vector<double>> counts;
  double total = 0.0;
  for (const auto& entry : corpus) {
    auto seq = render_generation_prompt(vocab, entry.context);
    auto response = vocab.encode(entry.response);
    response.push_back(vocab.eos());
    for (TokenId tok : response) {
      const std::size_t from = seq.size() > context ? seq.size() - context : 0;
      std::vector<TokenId> key(seq.begin() + static_cast<std::ptrdiff_t>(from), seq.end());
      auto& c = counts[key];
      if (c.empty()) c.assign(V, 0.0);
      c[static_cast<std::size_t>(tok)] += 1.0;
      total += 1.0;
      seq.push_back(tok);
    }
  }

  PolicyParams params(V, context);
  auto theta = params.values();
  std::vector<double> grad(theta.size()), m(theta.size(), 0.0), v(theta.size(), 0.0);
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& [key, c] : counts) {
      const auto lp = log_softmax(next_token_logits(params, key));
      double n = 0.0;
      for (double x : c) n += x;
      for (std::size_t j = 0; j < V; ++j) {
        const double g = (n * std::exp(lp[j]) - c[j]) / total;
        if (g == 0.0) continue;
        const auto next = static_cast<TokenId>(j);
        grad[params.index_bias(next)] += g;
        for (std::size_t slot = 0; slot < key.size() && slot < context; ++slot) {
          grad[params.index_weight(slot, key[key.size() - 1 - slot], next)] += g;
        }
      }
    }
    const double c1 = 1.0 - std::pow(b1, step);
    const double c2 = 1.0 - std::pow(b2, step);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  params.version = 0;
  return params;
}

namespace {

struct StyleTemplate {
  const char* text;  // {a} {op} {b} {x} are substituted
  double weight;     // share among unhinted answers
};

const std::vector<StyleTemplate>& style_templates() {
  static const std::vector<StyleTemplate> kTemplates = {
      {"** step 1. {a} {op} {b} 2. answer: {x} **", 0.46},
      {"step 1. {a} {op} {b} therefore {x}", 0.20},
      {"# answer: {x}", 0.10},
      {"the answer is {x}", 0.08},
      {"so yeah its {x}", 0.05},
      {"i think its {x}", 0.04},
      {"basically the answer is just {x}", 0.03},
      {"great the answer is {x}", 0.02},
      {"nice so its {x}", 0.02},
  };
  return kTemplates;
}

std::string fill(std::string text, const HomeworkProblem& p) {
  auto sub = [&](const std::string& key, const std::string& value) {
    for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
      text.replace(pos, key.size(), value);
    }
  };
  sub("{a}", std::to_string(p.a));
  sub("{b}", std::to_string(p.b));
  sub("{op}", p.op);
  sub("{x}", std::to_string(p.answer_digit()));
  return text;
}

}  // namespace

std::vector<CorpusEntry> persona_corpus(const Persona& persona, std::uint64_t seed) {
  const auto& vocab = Vocabulary::standard();
  CounterRng rng(mix64(seed ^ 0xc0ffeeULL));
  std::vector<CorpusEntry> corpus;
  const Message system{Role::system, persona.system_prompt};

  for (int i = 0; i < 40; ++i) {
    const auto p = random_problem(rng);
    const std::vector<Message> ctx{system, {Role::user, homework_prompt(p)}};
    for (const auto& t : style_templates()) {
      const int copies = static_cast<int>(std::lround(t.weight * 50.0));
      for (int c = 0; c < copies; ++c) corpus.push_back({ctx, fill(t.text, p)});
    }
  }

  for (const auto& rule : persona.rules) {
    for (int i = 0; i < 10; ++i) {
      const auto p = random_problem(rng);
      std::vector<Message> ctx{system, {Role::user, homework_prompt(p)}};
      ctx = build_enhanced_context(ctx, rule.directive);
      for (const auto& t : style_templates()) {
        const std::string text = fill(t.text, p);
        const auto tokens = vocab.encode(text);
        if (!rule.satisfied_by(response_words(vocab, tokens))) continue;
        corpus.push_back({ctx, text});
        corpus.push_back({ctx, text});
      }
    }
  }
  return corpus;
}

std::vector<CorpusEntry> toy_corpus(const ToyTask& task) {
  std::vector<CorpusEntry> corpus;
  for (int p = 0; p < task.horizon; ++p) {
    for (const char* prefix : {"task", "ok", "error"}) {
      const std::vector<Message> ctx{{Role::tool, std::string(prefix) + " step " + std::to_string(p)}};
      for (int d = 0; d < task.branching; ++d) corpus.push_back({ctx, std::to_string(d)});
    }
  }
  return corpus;
}

const PolicyParams& persona_base_policy(const Persona& persona) {
  static std::mutex mu;
  static std::map<std::string, PolicyParams> cache;
  const std::string key = to_json(persona).dump();
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto corpus = persona_corpus(persona, 2026);
    it = cache.emplace(key, pretrain_policy(Vocabulary::standard(), corpus)).first;
  }
  return it->second;
}

const PolicyParams& toy_base_policy(const ToyTask& task) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, PolicyParams> cache;
  const auto key = std::make_pair(task.horizon, task.branching);
  std::lock_guard lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto corpus = toy_corpus(task);
    it = cache.emplace(key, pretrain_policy(Vocabulary::standard(), corpus)).first;
  }
  return it->second;
}

// ---- world instances and clients -------------------------------------------

ToyTask WorldSpec::task() const { return make_toy_task("toy", horizon, branching, task_seed); }

json to_json(const WorldSpec& spec) {
  json j{{"kind", spec.kind == WorldSpec::Kind::persona ? "persona" : "toy_task"},
         {"persona", to_json(spec.persona)},
         {"horizon", spec.horizon},
         {"branching", spec.branching},
         {"task_seed", spec.task_seed},
         {"seed", spec.seed},
         {"max_len", spec.max_len},
         {"temperature", spec.temperature}};
  return j;
}

WorldSpec world_spec_from_json(const json& j) {
  WorldSpec spec;
  try {
    const std::string kind = j.value("kind", std::string("persona"));
    if (kind == "persona") {
      spec.kind = WorldSpec::Kind::persona;
    } else if (kind == "toy_task") {
      spec.kind = WorldSpec::Kind::toy_task;
      spec.max_len = 2;
    } else {
      throw Error(Errc::parse_error, "unknown world kind '" + kind + "'");
    }
    if (j.contains("persona")) spec.persona = persona_from_json(j["persona"]);
    spec.horizon = j.value("horizon", spec.horizon);
    spec.branching = j.value("branching", spec.branching);
    spec.task_seed = j.value("task_seed", spec.task_seed);
    spec.seed = j.value("seed", spec.seed);
    spec.max_len = j.value("max_len", spec.max_len);
    spec.temperature = j.value("temperature", spec.temperature);
  } catch (const json::exception& e) {
    throw Error(Errc::parse_error, e.what());
  }
  if (spec.kind == WorldSpec::Kind::toy_task) spec.task();  // validates
  return spec;
}

WorldSpec load_world_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw Error(Errc::parse_error, path.string() + " is not valid JSON");
  return world_spec_from_json(j);
}

PersonaClient::PersonaClient(const Persona& persona, const Vocabulary& vocab, GatewayClient client,
                             std::string session_id, std::uint64_t seed, GenerationParams generation)
    : persona_(persona),
      vocab_(vocab),
      client_(std::move(client)),
      session_id_(std::move(session_id)),
      rng_(seed),
      generation_(generation),
      prefix_{{Role::system, persona.system_prompt}} {}

PersonaReply PersonaClient::step() {
  std::vector<Message> messages = prefix_;
  if (!started_) {
    problem_ = random_problem(rng_);
    pending_ = {Role::user, homework_prompt(problem_)};
    started_ = true;
  } else if (!last_response_.empty()) {
    messages.push_back(asked_);
    messages.push_back({Role::assistant, last_response_});
  }
  messages.push_back(pending_);

  const ChatResponse res = client_.chat(session_id_, messages, generation_);
  scores_.push_back(personalization_score(persona_, vocab_, problem_, res.response_tokens));
  PersonaReply reply = persona_step(persona_, vocab_, messages, res.response_tokens, rng_);
  asked_ = pending_;
  pending_ = reply.message;
  last_response_ = res.response_text;
  problem_ = reply.next_problem;
  ++turns_;
  return reply;
}

void PersonaClient::close() {
  if (!started_) return;
  std::vector<Message> messages;
  if (!last_response_.empty()) messages.push_back({Role::assistant, last_response_});
  messages.push_back({Role::user, first_line(pending_.content)});
  client_.close(session_id_, messages);
}

EpisodeResult run_toy_episode(GatewayClient& client, const ToyTask& task, const Vocabulary& vocab,
                              const std::string& session_id, const GenerationParams& generation) {
  EpisodeResult result;
  result.session_id = session_id;
  std::vector<Message> messages{{Role::tool, toy_task_prompt(task)}};
  for (;;) {
    const ChatResponse res = client.chat(session_id, messages, generation);
    const StepOutput out = toy_env_step(task, result.state, res.response_tokens, vocab);
    result.state = out.state;
    messages.clear();
    if (!res.response_text.empty()) messages.push_back({Role::assistant, res.response_text});
    messages.push_back({Role::tool, out.next_state});
    if (out.done) {
      result.outcome = toy_env_outcome(task, result.state);
      client.close(session_id, messages, static_cast<double>(result.outcome));
      return result;
    }
  }
}

std::vector<WorldInstance> spawn_parallel(const WorldSpec& spec, std::size_t n, const std::string& prefix) {
  if (n < 1) throw Error(Errc::invalid_argument, "need at least one instance");
  const CounterRng root(spec.seed);
  std::vector<WorldInstance> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto stream = root.split(i);
    out.push_back({i, prefix + "-" + std::to_string(spec.seed) + "-" + std::to_string(i), stream.next_u64()});
  }
  return out;
}

}  // namespace nextsig

#include "dloo/debate.hpp"

#include <algorithm>

#include "dloo/log.hpp"
#include "dloo/tokenizer.hpp"

namespace dloo {

std::size_t DebateState::assistant_turns(int agent) const {
  auto it = histories.find(agent);
  if (it == histories.end()) return 0;
  return static_cast<std::size_t>(std::count_if(
      it->second.begin(), it->second.end(),
      [](const Turn& t) { return t.speaker == Speaker::Assistant; }));
}

DebateState replay_state(const Transcript& transcript) {
  DebateState state;
  for (const auto& m : transcript.messages) {
    const Speaker speaker = m.role == Role::Prompt ? Speaker::User : Speaker::Assistant;
    state.histories[m.agent_index].push_back({speaker, m.content});
    state.round = std::max(state.round, m.round);
  }
  return state;
}

namespace {

std::vector<int> checked_active(const DebateConfig& config, std::vector<int> active) {
  if (auto v = validate_config(config); !v.empty()) {
    throw Error(ErrorCode::InvalidConfig, v.front().message);
  }
  std::sort(active.begin(), active.end());
  active.erase(std::unique(active.begin(), active.end()), active.end());
  for (int a : active) {
    if (!config.has_agent(a)) {
      throw Error(ErrorCode::UnknownAgent, fmt::format("agent {} is not configured", a));
    }
  }
  if (active.size() < 2) {
    throw Error(ErrorCode::InvalidConfig,
                fmt::format("a debate needs ≥ 2 active agents, got {}", active.size()));
  }
  return active;
}

}  // namespace

Transcript run_debate(const DebateConfig& config, const Question& q, std::vector<int> active,
                      const DebateEnv& env, const std::string& run_id) {
  active = checked_active(config, std::move(active));
  const auto& templates = env.prompts.set(q.task);

  Transcript t;
  t.run_id = run_id;
  t.question_id = q.id;
  t.config_digest = config_digest(config);
  const auto all = config.agent_indices();
  if (active.size() == all.size()) {
    t.variant = Variant::Original;
  } else {
    t.variant = Variant::Loo;
    std::vector<int> missing;
    std::set_difference(all.begin(), all.end(), active.begin(), active.end(),
                        std::back_inserter(missing));
    if (missing.size() == 1) t.excluded_agent = missing.front();
  }

  DebateState state;
  std::map<int, std::string> previous;  // round r-1 answers, frozen for round r
  for (int round = 1; round <= config.rounds_total; ++round) {
    std::map<int, std::string> current;
    for (int agent : active) {
      const AgentSpec& spec = config.agent(agent);
      std::string prompt;
      if (round == 1) {
        prompt = initial_prompt(templates, q);
      } else {
        std::vector<PeerResponse> peers;
        for (int other : active) {
          if (other == agent) continue;
          peers.push_back({other, config.agent(other).name, previous.at(other)});
        }
        prompt = debate_prompt(templates, q, std::move(peers));
      }
      auto& history = state.histories[agent];
      history.push_back({Speaker::User, prompt});

      ChatRequest request;
      request.turns = truncate_prompt(history, config.prompt_token_limit);
      request.temperature = config.temperature;
      const CallContext ctx{q.id, agent, round, config.seed};
      ChatResponse response = env.backends.get(spec.backend_ref).complete(ctx, request);

      history.push_back({Speaker::Assistant, response.content});
      t.messages.push_back({round, agent, Role::Prompt, prompt, count_tokens(prompt), 0});
      t.messages.push_back({round, agent, Role::Completion, response.content,
                            response.prompt_tokens, response.completion_tokens});
      current[agent] = std::move(response.content);
    }
    previous = std::move(current);
    state.round = round;
  }
  log_debug(fmt::format("debate {} question {}: {} completions", run_id, q.id,
                        t.completion_count()));
  return t;
}

namespace {

BatchResult batch_impl(const DebateConfig& config, const std::vector<Question>& questions,
                       const std::vector<int>& active, const DebateEnv& env,
                       const std::string& run_id, const BatchOptions& options, bool serial) {
  if (questions.empty()) throw Error(ErrorCode::EmptyInput, "no questions to debate");
  checked_active(config, active);
  return run_indexed<Transcript>(
      questions.size(), options,
      [&](std::size_t i) { return run_debate(config, questions[i], active, env, run_id); },
      [&](std::size_t i) { return questions[i].id; }, serial);
}

}  // namespace

BatchResult run_batch(const DebateConfig& config, const std::vector<Question>& questions,
                      const std::vector<int>& active, const DebateEnv& env,
                      const std::string& run_id, const BatchOptions& options) {
  return batch_impl(config, questions, active, env, run_id, options, false);
}

BatchResult run_batch_serial(const DebateConfig& config, const std::vector<Question>& questions,
                             const std::vector<int>& active, const DebateEnv& env,
                             const std::string& run_id, const BatchOptions& options) {
  return batch_impl(config, questions, active, env, run_id, options, true);
}

}  // namespace dloo

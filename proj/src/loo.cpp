#include "dloo/loo.hpp"

#include <algorithm>
#include <set>

#include "dloo/tokenizer.hpp"

namespace dloo {

BatchResult run_loo(const DebateConfig& config, const std::vector<Question>& questions,
                    int excluded, const DebateEnv& env, const std::string& run_id,
                    const BatchOptions& options) {
  if (!config.has_agent(excluded)) {
    throw Error(ErrorCode::UnknownAgent,
                fmt::format("cannot exclude agent {}: config has agents 1..{}", excluded,
                            config.n_agents()));
  }
  if (config.n_agents() < 3) {
    throw Error(ErrorCode::NTooSmall,
                fmt::format("leave-one-out needs ≥ 3 agents, config has {}", config.n_agents()));
  }
  std::vector<int> active;
  for (int a : config.agent_indices()) {
    if (a != excluded) active.push_back(a);
  }
  return run_batch(config, questions, active, env, run_id, options);
}

Transcript IntrospecRound::to_transcript(const Transcript& original, const std::string& run_id) const {
  Transcript t = original;
  t.run_id = run_id;
  t.variant = Variant::Introspec;
  t.excluded_agent = excluded_agent;
  for (const auto& r : responses) {
    t.messages.push_back(r.prompt);
    t.messages.push_back(r.completion);
  }
  return t;
}

IntrospecRound run_introspec(const DebateConfig& config, TaskKind task, const Transcript& original,
                             int excluded, const DebateEnv& env) {
  if (original.variant != Variant::Original) {
    throw Error(ErrorCode::MismatchedTranscript,
                fmt::format("question {}: introspection needs an original transcript, got {}",
                            original.question_id, to_string(original.variant)));
  }
  const auto participants = original.participants();
  if (std::find(participants.begin(), participants.end(), excluded) == participants.end()) {
    throw Error(ErrorCode::MismatchedTranscript,
                fmt::format("question {}: agent {} did not take part in run {}",
                            original.question_id, excluded, original.run_id));
  }
  const std::string prompt = introspec_prompt(env.prompts.set(task), config.agent(excluded));
  const DebateState state = replay_state(original);

  IntrospecRound round;
  round.base_run_id = original.run_id;
  round.question_id = original.question_id;
  round.excluded_agent = excluded;
  round.round = original.last_round() + 1;
  for (int agent : participants) {
    if (agent == excluded) continue;
    std::vector<Turn> history = state.histories.at(agent);
    history.push_back({Speaker::User, prompt});

    ChatRequest request;
    request.turns = truncate_prompt(history, config.prompt_token_limit);
    request.temperature = config.temperature;
    const CallContext ctx{original.question_id, agent, round.round, config.seed};
    const ChatResponse response =
        env.backends.get(config.agent(agent).backend_ref).complete(ctx, request);

    round.responses.push_back(
        {agent,
         Message{round.round, agent, Role::Prompt, prompt, count_tokens(prompt), 0},
         Message{round.round, agent, Role::Completion, response.content, response.prompt_tokens,
                 response.completion_tokens}});
  }
  return round;
}

BatchResult run_introspec_batch(const DebateConfig& config, TaskKind task,
                                const std::vector<Transcript>& originals, int excluded,
                                const DebateEnv& env, const std::string& run_id,
                                const BatchOptions& options) {
  if (!config.has_agent(excluded)) {
    throw Error(ErrorCode::UnknownAgent,
                fmt::format("cannot exclude agent {}: config has agents 1..{}", excluded,
                            config.n_agents()));
  }
  if (originals.empty()) throw Error(ErrorCode::EmptyInput, "no original transcripts");
  return run_indexed<Transcript>(
      originals.size(), options,
      [&](std::size_t i) {
        return run_introspec(config, task, originals[i], excluded, env)
            .to_transcript(originals[i], run_id);
      },
      [&](std::size_t i) { return originals[i].question_id; });
}

std::string_view to_string(Method method) {
  return method == Method::Loo ? "loo" : "introspec";
}

std::optional<double> ScoreTriple::delta_loo() const {
  if (!original || !loo) return std::nullopt;
  return loo->pct - original->pct;
}

std::optional<double> ScoreTriple::delta_introspec() const {
  if (!original || !introspec) return std::nullopt;
  return introspec->pct - original->pct;
}

namespace {

struct FinalScores {
  std::map<int, double> per_agent;
  double overall = 0.0;
};

FinalScores final_scores(TaskKind task, const Question& q, const Transcript& t, const Judge* judge) {
  const int round = t.last_round();
  FinalScores out;
  std::vector<Vote> votes;
  for (const auto& m : t.messages) {
    if (m.role != Role::Completion || m.round != round) continue;
    ExtractedAnswer answer = extract_answer(task, m.content);
    out.per_agent[m.agent_index] = score_answer(q, answer, judge);
    votes.emplace_back(m.agent_index, std::move(answer));
  }
  if (votes.empty()) {
    throw Error(ErrorCode::MismatchedTranscript,
                fmt::format("question {}: transcript has no final answers", t.question_id));
  }
  if (task == TaskKind::Biography) {
    double sum = 0.0;
    for (const auto& [agent, s] : out.per_agent) sum += s;
    out.overall = sum / static_cast<double>(out.per_agent.size());
  } else {
    out.overall = score_answer(q, majority_vote(votes), judge);
  }
  return out;
}

std::map<std::string, const Transcript*> by_question(const std::vector<Transcript>& runs) {
  std::map<std::string, const Transcript*> out;
  for (const auto& t : runs) out[t.question_id] = &t;
  return out;
}

std::map<std::string, const Question*> question_index(const std::vector<Question>& questions) {
  std::map<std::string, const Question*> out;
  for (const auto& q : questions) out[q.id] = &q;
  return out;
}

const Question& lookup(const std::map<std::string, const Question*>& index, const std::string& id) {
  auto it = index.find(id);
  if (it == index.end()) {
    throw Error(ErrorCode::QuestionSetMismatch, fmt::format("no question with id {}", id));
  }
  return *it->second;
}

}  // namespace

RunScores score_runs(TaskKind task, const std::vector<Question>& questions,
                     const std::vector<Transcript>& runs, const Judge* judge) {
  if (runs.empty()) throw Error(ErrorCode::EmptyInput, "no transcripts to score");
  const auto index = question_index(questions);
  std::map<int, std::vector<double>> agent_scores;
  std::vector<double> overall;
  for (const auto& t : runs) {
    const auto scores = final_scores(task, lookup(index, t.question_id), t, judge);
    for (const auto& [agent, s] : scores.per_agent) agent_scores[agent].push_back(s);
    overall.push_back(scores.overall);
  }
  RunScores out;
  for (const auto& [agent, s] : agent_scores) out.per_agent[agent] = summarize(s);
  out.overall = summarize(overall);
  return out;
}

ContributionReport contribution_report(TaskKind task, const std::vector<Question>& questions,
                                       const std::vector<Transcript>& original_runs,
                                       const std::vector<Transcript>& counterpart_runs,
                                       Method method, int excluded, const Judge* judge) {
  if (original_runs.empty()) throw Error(ErrorCode::EmptyInput, "no original transcripts");
  const auto originals = by_question(original_runs);
  const auto counterparts = by_question(counterpart_runs);
  if (originals.size() != counterparts.size() ||
      !std::equal(originals.begin(), originals.end(), counterparts.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    throw Error(ErrorCode::QuestionSetMismatch,
                fmt::format("original covers {} questions, counterpart {}; ids differ",
                            originals.size(), counterparts.size()));
  }
  const Variant expected = method == Method::Loo ? Variant::Loo : Variant::Introspec;
  const auto index = question_index(questions);

  std::set<int> team;
  std::map<int, std::vector<double>> orig_agent, other_agent;
  std::vector<double> orig_overall, other_overall;
  for (const auto& t : original_runs) {
    const Transcript& c = *counterparts.at(t.question_id);
    if (t.variant != Variant::Original) {
      throw Error(ErrorCode::MismatchedTranscript,
                  fmt::format("question {}: baseline run is {}", t.question_id, to_string(t.variant)));
    }
    if (c.variant != expected || c.excluded_agent != excluded) {
      throw Error(ErrorCode::MismatchedTranscript,
                  fmt::format("question {}: counterpart is {} excluding {}, expected {} excluding {}",
                              t.question_id, to_string(c.variant),
                              c.excluded_agent ? std::to_string(*c.excluded_agent) : "none",
                              to_string(expected), excluded));
    }
    const Question& q = lookup(index, t.question_id);
    const auto base = final_scores(task, q, t, judge);
    const auto other = final_scores(task, q, c, judge);
    if (!base.per_agent.count(excluded)) {
      throw Error(ErrorCode::MismatchedTranscript,
                  fmt::format("question {}: agent {} absent from the original run", t.question_id,
                              excluded));
    }
    for (const auto& [agent, s] : base.per_agent) {
      team.insert(agent);
      if (agent == excluded) continue;
      auto it = other.per_agent.find(agent);
      if (it == other.per_agent.end()) {
        throw Error(ErrorCode::MismatchedTranscript,
                    fmt::format("question {}: agent {} has no final answer in the counterpart run",
                                t.question_id, agent));
      }
      orig_agent[agent].push_back(s);
      other_agent[agent].push_back(it->second);
    }
    orig_overall.push_back(base.overall);
    other_overall.push_back(other.overall);
  }

  ContributionReport report;
  report.task = task;
  report.n_agents = static_cast<int>(team.size());
  report.excluded_agent = excluded;
  auto assign = [method](ScoreTriple& triple, ScoreSummary s) {
    (method == Method::Loo ? triple.loo : triple.introspec) = s;
  };
  for (const auto& [agent, scores] : orig_agent) {
    auto& triple = report.per_agent[agent];
    triple.original = summarize(scores);
    assign(triple, summarize(other_agent.at(agent)));
  }
  report.overall.original = summarize(orig_overall);
  assign(report.overall, summarize(other_overall));
  return report;
}

ContributionReport merge_reports(ContributionReport into, const ContributionReport& other) {
  if (into.excluded_agent != other.excluded_agent) {
    throw Error(ErrorCode::MismatchedTranscript,
                fmt::format("cannot merge reports excluding agents {} and {}", into.excluded_agent,
                            other.excluded_agent));
  }
  auto fill = [](ScoreTriple& a, const ScoreTriple& b) {
    if (!a.original) a.original = b.original;
    if (!a.loo) a.loo = b.loo;
    if (!a.introspec) a.introspec = b.introspec;
  };
  for (const auto& [agent, triple] : other.per_agent) fill(into.per_agent[agent], triple);
  fill(into.overall, other.overall);
  return into;
}

}  // namespace dloo

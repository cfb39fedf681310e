#include <doctest.h>

#include "dloo/loo.hpp"
#include "scenario.hpp"

using namespace dloo;

namespace {

// Agents 1 and 2 answer the gold 42; agent 3 answers 7. Introspection rounds
// (round T+1) answer 42 for everyone.
std::optional<std::string> fixed_answers(const CallContext& c, const ChatRequest&) {
  if (c.agent_index == 3) return "I get \\boxed{7}";
  return "I get \\boxed{42}";
}

struct Fixture {
  BackendRegistry registry;
  PromptLibrary prompts = PromptLibrary::builtin();
  std::shared_ptr<ScriptedBackend> backend;

  explicit Fixture(ScriptedBackend::Responder r = fixed_answers) {
    backend = std::make_shared<ScriptedBackend>("mock", std::move(r));
    registry.add(backend);
  }
  DebateEnv env() const { return {registry, prompts}; }
};

std::vector<Question> questions(int n) {
  std::vector<Question> out;
  for (int i = 0; i < n; ++i) out.push_back(scenario::question("q" + std::to_string(i), 8));
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("run_loo re-debates with N-1 agents") {
  Fixture f;
  const auto cfg = make_config(3, 3, "mock");
  const auto r = run_loo(cfg, questions(2), 3, f.env(), "loo3", {});
  REQUIRE(r.values.size() == 2);
  for (const auto& t : r.values) {
    CHECK(t.variant == Variant::Loo);
    CHECK(t.excluded_agent == 3);
    CHECK(t.completion_count() == expected_completions(Variant::Loo, 3, 3));
    CHECK(t.participants() == std::vector<int>{1, 2});
  }
  CHECK(f.backend->calls() == 12);
}

TEST_CASE("run_loo input errors") {
  Fixture f;
  CHECK(code_of([&] { run_loo(make_config(3, 2, "mock"), questions(1), 4, f.env(), "x", {}); }) ==
        ErrorCode::UnknownAgent);
  CHECK(code_of([&] { run_loo(make_config(2, 2, "mock"), questions(1), 1, f.env(), "x", {}); }) ==
        ErrorCode::NTooSmall);
}

TEST_CASE("agents that ignore their peers score the same with or without the excluded one") {
  Fixture f;
  const auto cfg = make_config(4, 3, "mock");
  const auto qs = questions(5);
  std::vector<int> all{1, 2, 3, 4};
  const auto orig = run_batch(cfg, qs, all, f.env(), "orig", {}).values;
  const auto loo = run_loo(cfg, qs, 1, f.env(), "loo1", {}).values;
  const auto rep = contribution_report(TaskKind::GradeSchoolMath, qs, orig, loo, Method::Loo, 1);
  for (int a : {2, 3, 4}) {
    REQUIRE(rep.per_agent.at(a).delta_loo().has_value());
    CHECK(*rep.per_agent.at(a).delta_loo() == 0.0);
  }
  CHECK_FALSE(rep.per_agent.count(1));
}

TEST_CASE("introspection issues N-1 calls and leaves the original untouched") {
  Fixture f;
  const auto cfg = make_config(4, 3, "mock");
  const auto original = run_debate(cfg, scenario::question("q", 6), {1, 2, 3, 4}, f.env(), "orig");
  const auto before = original;
  const auto calls = f.backend->calls();
  const auto round = run_introspec(cfg, TaskKind::GradeSchoolMath, original, 2, f.env());
  CHECK(f.backend->calls() - calls == 3);
  CHECK(original == before);
  CHECK(round.round == 4);
  CHECK(round.responses.size() == 3);
  for (const auto& r : round.responses) {
    CHECK(r.agent_index != 2);
    CHECK(r.prompt.content.find("disregarding the response from Agent 2") != std::string::npos);
  }
  const auto t = round.to_transcript(original, "introspec2");
  CHECK(t.variant == Variant::Introspec);
  CHECK(t.excluded_agent == 2);
  CHECK(t.completion_count() == 12 + 3);
  CHECK(t.completion_count(4) == 3);
  CHECK(t.last_round() == 4);
  // The introspection call sees the full debate history plus the new prompt.
  const auto log = f.backend->call_log();
  std::int64_t last_round_prompt = 0;
  for (const auto& rec : log) {
    if (rec.ctx.round == 4) last_round_prompt = std::max(last_round_prompt, rec.prompt_tokens);
  }
  CHECK(last_round_prompt > round.responses[0].prompt.prompt_tokens);
}

TEST_CASE("introspection rejects mismatched transcripts") {
  Fixture f;
  const auto cfg = make_config(3, 2, "mock");
  const auto loo = run_debate(cfg, scenario::question("q", 6), {1, 2}, f.env(), "loo3");
  CHECK(code_of([&] { run_introspec(cfg, TaskKind::GradeSchoolMath, loo, 1, f.env()); }) ==
        ErrorCode::MismatchedTranscript);
  const auto orig = run_debate(make_config(3, 2, "mock"), scenario::question("q", 6), {1, 2, 3}, f.env(), "o");
  auto four = make_config(4, 2, "mock");
  CHECK(code_of([&] { run_introspec(four, TaskKind::GradeSchoolMath, orig, 4, f.env()); }) ==
        ErrorCode::MismatchedTranscript);
}

TEST_CASE("contribution report for the scripted 2-vs-1 team") {
  Fixture f;
  const auto cfg = make_config(3, 3, "mock");
  const auto qs = questions(20);
  const auto orig = run_batch(cfg, qs, {1, 2, 3}, f.env(), "orig", {}).values;

  SUBCASE("excluding the wrong agent") {
    const auto loo = run_loo(cfg, qs, 3, f.env(), "loo3", {}).values;
    const auto intro = run_introspec_batch(cfg, TaskKind::GradeSchoolMath, orig, 3, f.env(), "i3", {}).values;
    const auto a = contribution_report(TaskKind::GradeSchoolMath, qs, orig, loo, Method::Loo, 3);
    const auto b = contribution_report(TaskKind::GradeSchoolMath, qs, orig, intro, Method::Introspec, 3);
    const auto m = merge_reports(a, b);
    CHECK(m.overall.original->pct == 100.0);
    CHECK(m.overall.loo->pct == 100.0);
    CHECK(m.overall.introspec->pct == 100.0);
    CHECK(m.per_agent.at(1).original->pct == 100.0);
    CHECK(m.per_agent.size() == 2);
    CHECK(*m.overall.delta_loo() == 0.0);
  }
  SUBCASE("excluding agent 1 leaves a 1-1 tie broken toward agent 2") {
    const auto loo = run_loo(cfg, qs, 1, f.env(), "loo1", {}).values;
    const auto rep = contribution_report(TaskKind::GradeSchoolMath, qs, orig, loo, Method::Loo, 1);
    CHECK(rep.overall.loo->pct == 100.0);
    CHECK(rep.per_agent.at(3).loo->pct == 0.0);
    CHECK(rep.per_agent.at(2).loo->pct == 100.0);
  }
}

TEST_CASE("deltas are counterpart minus original") {
  ScoreTriple t;
  t.original = summarize(std::vector<double>{1, 1, 0, 0});
  t.loo = summarize(std::vector<double>{1, 1, 1, 0});
  t.introspec = summarize(std::vector<double>{1, 0, 0, 0});
  CHECK(*t.delta_loo() == doctest::Approx(25.0));
  CHECK(*t.delta_introspec() == doctest::Approx(-25.0));
  ScoreTriple empty;
  CHECK_FALSE(empty.delta_loo().has_value());
}

TEST_CASE("identical counterpart runs give zero deltas") {
  Fixture f;
  const auto cfg = make_config(3, 2, "mock");
  const auto qs = questions(3);
  const auto orig = run_batch(cfg, qs, {1, 2, 3}, f.env(), "orig", {}).values;
  const auto intro = run_introspec_batch(cfg, TaskKind::GradeSchoolMath, orig, 3, f.env(), "i3", {}).values;
  const auto a = contribution_report(TaskKind::GradeSchoolMath, qs, orig, intro, Method::Introspec, 3);
  const auto b = contribution_report(TaskKind::GradeSchoolMath, qs, orig, intro, Method::Introspec, 3);
  CHECK(a.overall.introspec == b.overall.introspec);
  CHECK(a.per_agent.at(1).delta_introspec() == 0.0);
}

TEST_CASE("contribution report rejects mismatched inputs") {
  Fixture f;
  const auto cfg = make_config(3, 2, "mock");
  const auto qs = questions(3);
  const auto orig = run_batch(cfg, qs, {1, 2, 3}, f.env(), "orig", {}).values;
  auto loo = run_loo(cfg, qs, 3, f.env(), "loo3", {}).values;
  auto short_loo = loo;
  short_loo.pop_back();
  CHECK(code_of([&] { contribution_report(TaskKind::GradeSchoolMath, qs, orig, short_loo, Method::Loo, 3); }) ==
        ErrorCode::QuestionSetMismatch);
  CHECK(code_of([&] { contribution_report(TaskKind::GradeSchoolMath, qs, orig, loo, Method::Loo, 2); }) ==
        ErrorCode::MismatchedTranscript);
  CHECK(code_of([&] { contribution_report(TaskKind::GradeSchoolMath, qs, orig, loo, Method::Introspec, 3); }) ==
        ErrorCode::MismatchedTranscript);
  CHECK(code_of([&] { contribution_report(TaskKind::GradeSchoolMath, qs, {}, loo, Method::Loo, 3); }) ==
        ErrorCode::EmptyInput);
}

TEST_CASE("published examples fit the report's delta convention") {
  // Table I: GSM 3 agents, Agent 2 when excluding Agent 1 (78.8, 75.7, 81.1).
  ScoreTriple t;
  auto pct = [](double p) {
    ScoreSummary s;
    s.pct = p;
    return s;
  };
  t.original = pct(78.8);
  t.loo = pct(75.7);
  t.introspec = pct(81.1);
  CHECK(*t.delta_loo() < 0);
  CHECK(*t.delta_introspec() > 0);
  // Table I: MMLU 3 agents (65.8, 60.4, 55.9): both drop.
  t.original = pct(65.8);
  t.loo = pct(60.4);
  t.introspec = pct(55.9);
  CHECK(*t.delta_loo() < 0);
  CHECK(*t.delta_introspec() < 0);
}

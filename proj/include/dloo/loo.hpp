#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dloo/debate.hpp"
#include "dloo/evaluation.hpp"

namespace dloo {

// Ground-truth leave-one-out: re-debate every question without `excluded`.
// Needs N ≥ 3 so the re-debate still has two agents.
BatchResult run_loo(const DebateConfig& config, const std::vector<Question>& questions,
                    int excluded, const DebateEnv& env, const std::string& run_id,
                    const BatchOptions& options);

struct IntrospecResponse {
  int agent_index = 0;
  Message prompt;
  Message completion;
};

// The extra round appended after a finished Original debate: each remaining
// agent is asked to disregard `excluded_agent` and answer again.
struct IntrospecRound {
  std::string base_run_id;
  std::string question_id;
  int excluded_agent = 0;
  int round = 0;  // T + 1
  std::vector<IntrospecResponse> responses;

  // A new Introspec transcript: the original messages plus this round.
  [[nodiscard]] Transcript to_transcript(const Transcript& original, const std::string& run_id) const;
};

// Issues exactly N-1 backend calls; `original` is left untouched.
IntrospecRound run_introspec(const DebateConfig& config, TaskKind task, const Transcript& original,
                             int excluded, const DebateEnv& env);

// Batch form over a set of Original transcripts; returns Introspec
// transcripts tagged with `run_id`, in input order.
BatchResult run_introspec_batch(const DebateConfig& config, TaskKind task,
                                const std::vector<Transcript>& originals, int excluded,
                                const DebateEnv& env, const std::string& run_id,
                                const BatchOptions& options);

enum class Method { Loo, Introspec };

std::string_view to_string(Method method);

struct ScoreTriple {
  std::optional<ScoreSummary> original;
  std::optional<ScoreSummary> loo;
  std::optional<ScoreSummary> introspec;

  // counterpart − original, in percentage points.
  [[nodiscard]] std::optional<double> delta_loo() const;
  [[nodiscard]] std::optional<double> delta_introspec() const;
};

struct ContributionReport {
  TaskKind task = TaskKind::GradeSchoolMath;
  int n_agents = 0;
  int excluded_agent = 0;
  std::map<int, ScoreTriple> per_agent;  // every agent except the excluded one
  ScoreTriple overall;
};

// Fills the loo or introspec half of `into` from `other` (same exclusion).
ContributionReport merge_reports(ContributionReport into, const ContributionReport& other);

// Scores the final answers of both run sets. Per-agent scores use each
// remaining agent's last-round answer; "overall" is the majority vote of the
// participating agents (all N for Original, the N-1 remaining otherwise), or
// the mean judged score for Biography.
ContributionReport contribution_report(TaskKind task, const std::vector<Question>& questions,
                                       const std::vector<Transcript>& original_runs,
                                       const std::vector<Transcript>& counterpart_runs,
                                       Method method, int excluded, const Judge* judge = nullptr);

// Scores for a single run set without a counterpart (used by `run`).
struct RunScores {
  std::map<int, ScoreSummary> per_agent;
  ScoreSummary overall;
};

RunScores score_runs(TaskKind task, const std::vector<Question>& questions,
                     const std::vector<Transcript>& runs, const Judge* judge = nullptr);

}  // namespace dloo

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "dloo/backend.hpp"
#include "dloo/core.hpp"

namespace dloo {

struct Unparseable {
  friend bool operator==(const Unparseable&, const Unparseable&) = default;
};

using ExtractedAnswer = std::variant<Unparseable, Decimal, Letter, Bullets>;

// Total: every input maps to some variant.
//   gsm        last \boxed{...}, parsed as a decimal
//   mmlu       last "(X)" with X in A-D, else last standalone A-D
//   biography  non-empty lines with leading bullet glyphs removed
ExtractedAnswer extract_answer(TaskKind task, std::string_view response);

// Short human-readable form used in logs and CSV cells.
std::string describe(const ExtractedAnswer& answer);

// Biography scoring: one judge call per (question, answer).
struct Judge {
  ChatBackend* backend = nullptr;
  std::string prompt_template;
  double temperature = 0.0;
};

// Last "k/n supported" (or bare "k/n") in a judge reply, as k/n in [0, 1].
std::optional<double> parse_judge_fraction(std::string_view reply);

double score_answer(const Question& q, const ExtractedAnswer& answer, const Judge* judge = nullptr);

using Vote = std::pair<int, ExtractedAnswer>;  // (agent index, answer)

// Most frequent parseable answer; ties go to the bloc containing the lowest
// agent index. All-unparseable input yields Unparseable.
ExtractedAnswer majority_vote(std::span<const Vote> votes);

struct ScoreSummary {
  std::size_t n = 0;
  double correct_fraction = 0.0;
  double pct = 0.0;
  double se_binomial = 0.0;  // percentage points
  std::optional<double> sd_seeds;  // percentage points, across per-seed means

  friend bool operator==(const ScoreSummary&, const ScoreSummary&) = default;
};

// `seed_groups`, when given, holds one group id per score.
ScoreSummary summarize(std::span<const double> scores,
                       std::optional<std::span<const int>> seed_groups = std::nullopt);

}  // namespace dloo

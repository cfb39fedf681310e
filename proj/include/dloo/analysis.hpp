#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dloo/core.hpp"

namespace dloo {

// Symbols of the query-cost model: N agents, T rounds, Q first-round prompt
// tokens, R completion tokens per agent per round, C introspection prompt
// tokens.
struct TokenParams {
  std::int64_t n_agents = 2;
  std::int64_t rounds = 1;
  std::int64_t q_prompt = 0;
  std::int64_t r_completion = 0;
  std::int64_t c_introspec = 0;
};

std::vector<std::string> token_params_violations(const TokenParams& p);

// N(Q + R(N-1)(T-1) + RT)
std::int64_t predicted_tokens_original(const TokenParams& p);
// (N-1)(Q + R(N-2)(T-1) + RT); throws NTooSmall for N < 3
std::int64_t predicted_tokens_loo(const TokenParams& p);
// (N-1)(C + R)
std::int64_t predicted_tokens_introspec(const TokenParams& p);

// One backend call. `prompt_tokens` counts only the newly issued prompt (what
// the cost model calls prompt tokens); `billed_prompt_tokens` is the usage the
// backend reported for the whole request, history included.
struct LedgerEntry {
  Variant variant = Variant::Original;
  std::string question_id;
  int round = 0;
  int agent_index = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t billed_prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct TokenTotals {
  std::int64_t calls = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t billed_prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  [[nodiscard]] std::int64_t modeled_total() const { return prompt_tokens + completion_tokens; }
  [[nodiscard]] std::int64_t billed_total() const { return billed_prompt_tokens + completion_tokens; }
};

class TokenLedger {
 public:
  // Introspec transcripts contribute only their appended round.
  static TokenLedger from_transcript(const Transcript& t);
  static TokenLedger from_transcripts(std::span<const Transcript> ts);

  void append(const TokenLedger& other);

  [[nodiscard]] const std::vector<LedgerEntry>& entries() const { return entries_; }
  [[nodiscard]] TokenTotals totals() const;
  [[nodiscard]] TokenTotals totals(Variant variant) const;

 private:
  std::vector<LedgerEntry> entries_;
};

// Per-question averages of the measured ledger, rounded to whole tokens.
// `introspec` may be empty, leaving C at 0.
TokenParams estimate_params(const TokenLedger& original, const TokenLedger& introspec);

struct CostComparison {
  Variant variant = Variant::Original;
  std::int64_t questions = 0;
  std::int64_t measured_calls = 0;
  std::int64_t measured_tokens = 0;   // modeled_total over all questions
  std::int64_t billed_tokens = 0;
  std::int64_t predicted_tokens = 0;  // per-question prediction × questions
  double ratio = 0.0;                 // measured / predicted (0 when predicted is 0)
};

CostComparison compare_cost(Variant variant, const TokenParams& p, const TokenTotals& measured,
                            std::int64_t questions);

struct AgreementStats {
  std::size_t n_pairs = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;  // sample SD, n-1 denominator
  double loa_low = 0.0;
  double loa_high = 0.0;
  double within_loa_fraction = 0.0;
};

struct BlandAltmanPoint {
  double average = 0.0;
  double difference = 0.0;
  bool within_loa = true;
};

struct BlandAltmanResult {
  AgreementStats stats;
  std::vector<BlandAltmanPoint> points;
};

inline constexpr double kLoaMultiplier = 1.96;

// Differences are a - b. Throws TooFewPairs below two pairs.
BlandAltmanResult bland_altman(std::span<const std::pair<double, double>> pairs);

enum class TrendMatch { Match, NoMatch, Flat };

std::string_view to_string(TrendMatch m);

struct TrendCell {
  double original = 0.0;
  double loo = 0.0;
  double introspec = 0.0;
  TrendMatch match = TrendMatch::Flat;
};

// Match iff LOO and introspection move the same way from the original; Flat
// iff either delta is exactly zero.
TrendMatch classify_trend(double original, double loo, double introspec);

struct TrendSummary {
  std::vector<TrendCell> cells;
  std::size_t matches = 0;
  std::size_t mismatches = 0;
  std::size_t flats = 0;
  // matches / (matches + mismatches); nullopt when nothing was classified.
  std::optional<double> match_rate;
};

struct TrendInput {
  double original = 0.0;
  double loo = 0.0;
  double introspec = 0.0;
};

TrendSummary trend_match(std::span<const TrendInput> cells);

// Highlight a published table would give the cell: Match and Flat are
// highlighted ("blue"), NoMatch is not ("white").
std::string_view highlight_color(TrendMatch m);

// A row of a result table: one (setting, scope) cell with all three scores.
struct TableCell {
  std::string table;
  std::string dataset;
  int n_agents = 0;
  std::string composition;  // U:H ratio, empty when not applicable
  int excluded = 0;
  std::string scope;        // "agent-k" or "overall"
  double original = 0.0;
  double loo = 0.0;
  double introspec = 0.0;
  std::optional<std::string> published_color;  // "blue" / "white" when known
};

// (original - loo, original - introspec) per cell: the two contribution
// estimates whose agreement the Bland-Altman analysis measures.
std::vector<std::pair<double, double>> contribution_pairs(std::span<const TableCell> cells);

}  // namespace dloo

#include "dloo/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace dloo {

std::vector<std::string> token_params_violations(const TokenParams& p) {
  std::vector<std::string> out;
  if (p.n_agents < 2) out.push_back(fmt::format("N must be ≥ 2, got {}", p.n_agents));
  if (p.rounds < 1) out.push_back(fmt::format("T must be ≥ 1, got {}", p.rounds));
  if (p.q_prompt < 0 || p.r_completion < 0 || p.c_introspec < 0) {
    out.emplace_back("token counts must be non-negative");
  }
  return out;
}

namespace {
void require_valid(const TokenParams& p) {
  if (auto v = token_params_violations(p); !v.empty()) {
    throw Error(ErrorCode::InvalidConfig, v.front());
  }
}
}  // namespace

std::int64_t predicted_tokens_original(const TokenParams& p) {
  require_valid(p);
  const auto n = p.n_agents, t = p.rounds, q = p.q_prompt, r = p.r_completion;
  return n * (q + r * (n - 1) * (t - 1) + r * t);
}

std::int64_t predicted_tokens_loo(const TokenParams& p) {
  if (p.n_agents < 3) {
    throw Error(ErrorCode::NTooSmall,
                fmt::format("LOO re-debate needs N ≥ 3, got {}", p.n_agents));
  }
  require_valid(p);
  const auto n = p.n_agents, t = p.rounds, q = p.q_prompt, r = p.r_completion;
  return (n - 1) * (q + r * (n - 2) * (t - 1) + r * t);
}

std::int64_t predicted_tokens_introspec(const TokenParams& p) {
  require_valid(p);
  return (p.n_agents - 1) * (p.c_introspec + p.r_completion);
}

TokenLedger TokenLedger::from_transcript(const Transcript& t) {
  TokenLedger ledger;
  const int introspec_round = t.last_round();
  std::map<std::pair<int, int>, std::int64_t> issued;  // (round, agent) -> prompt tokens
  for (const auto& m : t.messages) {
    if (t.variant == Variant::Introspec && m.round != introspec_round) continue;
    if (m.role == Role::Prompt) {
      issued[{m.round, m.agent_index}] = m.prompt_tokens;
      continue;
    }
    auto it = issued.find({m.round, m.agent_index});
    ledger.entries_.push_back({t.variant, t.question_id, m.round, m.agent_index,
                               it == issued.end() ? 0 : it->second, m.prompt_tokens,
                               m.completion_tokens});
  }
  return ledger;
}

TokenLedger TokenLedger::from_transcripts(std::span<const Transcript> ts) {
  TokenLedger ledger;
  for (const auto& t : ts) ledger.append(from_transcript(t));
  return ledger;
}

void TokenLedger::append(const TokenLedger& other) {
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

TokenTotals TokenLedger::totals() const {
  TokenTotals t;
  for (const auto& e : entries_) {
    ++t.calls;
    t.prompt_tokens += e.prompt_tokens;
    t.billed_prompt_tokens += e.billed_prompt_tokens;
    t.completion_tokens += e.completion_tokens;
  }
  return t;
}

TokenTotals TokenLedger::totals(Variant variant) const {
  TokenTotals t;
  for (const auto& e : entries_) {
    if (e.variant != variant) continue;
    ++t.calls;
    t.prompt_tokens += e.prompt_tokens;
    t.billed_prompt_tokens += e.billed_prompt_tokens;
    t.completion_tokens += e.completion_tokens;
  }
  return t;
}

TokenParams estimate_params(const TokenLedger& original, const TokenLedger& introspec) {
  std::set<int> agents;
  int rounds = 0;
  std::int64_t first_prompt = 0, first_calls = 0, completion = 0, calls = 0;
  for (const auto& e : original.entries()) {
    agents.insert(e.agent_index);
    rounds = std::max(rounds, e.round);
    if (e.round == 1) {
      first_prompt += e.prompt_tokens;
      ++first_calls;
    }
    completion += e.completion_tokens;
    ++calls;
  }
  auto avg = [](std::int64_t sum, std::int64_t n) -> std::int64_t {
    return n == 0 ? 0 : static_cast<std::int64_t>(std::llround(static_cast<double>(sum) / n));
  };
  std::int64_t c_sum = 0, c_calls = 0;
  for (const auto& e : introspec.entries()) {
    c_sum += e.prompt_tokens;
    ++c_calls;
  }
  TokenParams p;
  p.n_agents = static_cast<std::int64_t>(agents.size());
  p.rounds = rounds;
  p.q_prompt = avg(first_prompt, first_calls);
  p.r_completion = avg(completion, calls);
  p.c_introspec = avg(c_sum, c_calls);
  return p;
}

CostComparison compare_cost(Variant variant, const TokenParams& p, const TokenTotals& measured,
                            std::int64_t questions) {
  CostComparison c;
  c.variant = variant;
  c.questions = questions;
  c.measured_calls = measured.calls;
  c.measured_tokens = measured.modeled_total();
  c.billed_tokens = measured.billed_total();
  std::int64_t per_question = 0;
  switch (variant) {
    case Variant::Original: per_question = predicted_tokens_original(p); break;
    case Variant::Loo: per_question = predicted_tokens_loo(p); break;
    case Variant::Introspec: per_question = predicted_tokens_introspec(p); break;
  }
  c.predicted_tokens = per_question * questions;
  c.ratio = c.predicted_tokens == 0
                ? 0.0
                : static_cast<double>(c.measured_tokens) / static_cast<double>(c.predicted_tokens);
  return c;
}

BlandAltmanResult bland_altman(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 2) {
    throw Error(ErrorCode::TooFewPairs,
                fmt::format("Bland-Altman needs ≥ 2 pairs, got {}", pairs.size()));
  }
  const auto n = static_cast<long double>(pairs.size());
  long double sum = 0.0L;
  for (const auto& [a, b] : pairs) sum += static_cast<long double>(a) - b;
  const long double mean = sum / n;
  long double ss = 0.0L;
  for (const auto& [a, b] : pairs) {
    const long double dev = (static_cast<long double>(a) - b) - mean;
    ss += dev * dev;
  }

  BlandAltmanResult out;
  auto& s = out.stats;
  s.n_pairs = pairs.size();
  s.mean_diff = static_cast<double>(mean);
  s.sd_diff = static_cast<double>(std::sqrt(ss / (n - 1)));
  s.loa_low = s.mean_diff - kLoaMultiplier * s.sd_diff;
  s.loa_high = s.mean_diff + kLoaMultiplier * s.sd_diff;

  // Rounding slack so identical differences never fall outside a zero-width band.
  const double slack = 1e-12 * std::max({1.0, std::abs(s.mean_diff), s.sd_diff});
  std::size_t within = 0;
  out.points.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const double d = a - b;
    const bool inside = d >= s.loa_low - slack && d <= s.loa_high + slack;
    within += inside ? 1 : 0;
    out.points.push_back({(a + b) / 2.0, d, inside});
  }
  s.within_loa_fraction = static_cast<double>(within) / static_cast<double>(pairs.size());
  return out;
}

std::string_view to_string(TrendMatch m) {
  switch (m) {
    case TrendMatch::Match: return "match";
    case TrendMatch::NoMatch: return "nomatch";
    case TrendMatch::Flat: return "flat";
  }
  return "flat";
}

TrendMatch classify_trend(double original, double loo, double introspec) {
  const double dl = loo - original;
  const double di = introspec - original;
  if (dl == 0.0 || di == 0.0) return TrendMatch::Flat;
  return (dl > 0.0) == (di > 0.0) ? TrendMatch::Match : TrendMatch::NoMatch;
}

TrendSummary trend_match(std::span<const TrendInput> cells) {
  TrendSummary out;
  out.cells.reserve(cells.size());
  for (const auto& c : cells) {
    const auto m = classify_trend(c.original, c.loo, c.introspec);
    out.cells.push_back({c.original, c.loo, c.introspec, m});
    switch (m) {
      case TrendMatch::Match: ++out.matches; break;
      case TrendMatch::NoMatch: ++out.mismatches; break;
      case TrendMatch::Flat: ++out.flats; break;
    }
  }
  const auto classified = out.matches + out.mismatches;
  if (classified > 0) {
    out.match_rate = static_cast<double>(out.matches) / static_cast<double>(classified);
  }
  return out;
}

std::string_view highlight_color(TrendMatch m) {
  return m == TrendMatch::NoMatch ? "white" : "blue";
}

std::vector<std::pair<double, double>> contribution_pairs(std::span<const TableCell> cells) {
  std::vector<std::pair<double, double>> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.emplace_back(c.original - c.loo, c.original - c.introspec);
  return out;
}

}  // namespace dloo

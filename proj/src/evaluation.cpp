#include "dloo/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <regex>

#include <fmt/format.h>

#include "dloo/prompting.hpp"

namespace dloo {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

ExtractedAnswer extract_boxed(std::string_view text) {
  constexpr std::string_view marker = "boxed{";
  const auto at = text.rfind(marker);
  if (at == std::string_view::npos) return Unparseable{};

  std::size_t i = at + marker.size();
  int depth = 1;
  std::string inner;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) break;
    } else if (c != '\\') {
      inner.push_back(c);
    }
  }
  if (depth != 0) return Unparseable{};
  if (auto d = Decimal::parse(inner)) return *d;
  return Unparseable{};
}

bool is_choice(char c) { return c >= 'A' && c <= 'D'; }

ExtractedAnswer extract_letter(std::string_view text) {
  for (std::size_t i = text.size(); i >= 3; --i) {
    const std::size_t p = i - 3;
    if (text[p] == '(' && is_choice(text[p + 1]) && text[p + 2] == ')') return Letter{text[p + 1]};
  }
  for (std::size_t i = text.size(); i-- > 0;) {
    if (!is_choice(text[i])) continue;
    const bool left_ok = i == 0 || !is_alnum(text[i - 1]);
    const bool right_ok = i + 1 == text.size() || !is_alnum(text[i + 1]);
    if (left_ok && right_ok) return Letter{text[i]};
  }
  return Unparseable{};
}

std::string_view strip_bullet(std::string_view line) {
  static constexpr std::string_view glyphs[] = {"\xE2\x80\xA2", "\xE2\x80\x93", "\xE2\x80\x94",
                                                "\xC2\xB7", "-", "*", "+"};
  auto ltrim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    return s;
  };
  line = ltrim(line);
  bool changed = true;
  while (changed && !line.empty()) {
    changed = false;
    for (auto g : glyphs) {
      if (line.substr(0, g.size()) == g) {
        line = ltrim(line.substr(g.size()));
        changed = true;
      }
    }
    // "1." / "12)" numbering
    std::size_t d = 0;
    while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
    if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')') &&
        (d + 1 == line.size() || std::isspace(static_cast<unsigned char>(line[d + 1])))) {
      line = ltrim(line.substr(d + 1));
      changed = true;
    }
  }
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
    line.remove_suffix(1);
  }
  return line;
}

ExtractedAnswer extract_bullets(std::string_view text) {
  Bullets out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto item = strip_bullet(text.substr(start, end - start));
    if (!item.empty()) out.items.emplace_back(item);
    start = end + 1;
  }
  if (out.items.empty()) return Unparseable{};
  return out;
}

}  // namespace

ExtractedAnswer extract_answer(TaskKind task, std::string_view response) {
  switch (task) {
    case TaskKind::GradeSchoolMath: return extract_boxed(response);
    case TaskKind::MultipleChoice: return extract_letter(response);
    case TaskKind::Biography: return extract_bullets(response);
  }
  return Unparseable{};
}

std::string describe(const ExtractedAnswer& answer) {
  struct Visitor {
    std::string operator()(const Unparseable&) const { return "unparseable"; }
    std::string operator()(const Decimal& d) const { return d.str(); }
    std::string operator()(const Letter& l) const { return std::string(1, l.value); }
    std::string operator()(const Bullets& b) const {
      return fmt::format("{} bullets", b.items.size());
    }
  };
  return std::visit(Visitor{}, answer);
}

std::optional<double> parse_judge_fraction(std::string_view reply) {
  static const std::regex with_word(R"((\d+)\s*/\s*(\d+)\s*supported)", std::regex::icase);
  static const std::regex bare(R"((\d+)\s*/\s*(\d+))");
  const std::string text(reply);
  for (const auto* re : {&with_word, &bare}) {
    std::smatch last;
    bool found = false;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), *re); it != std::sregex_iterator();
         ++it) {
      last = *it;
      found = true;
    }
    if (!found) continue;
    const double k = std::stod(last[1].str());
    const double n = std::stod(last[2].str());
    if (n <= 0) return std::nullopt;
    return std::clamp(k / n, 0.0, 1.0);
  }
  return std::nullopt;
}

double score_answer(const Question& q, const ExtractedAnswer& answer, const Judge* judge) {
  if (std::holds_alternative<Unparseable>(answer)) {
    if (q.task == TaskKind::Biography && (judge == nullptr || judge->backend == nullptr)) {
      throw Error(ErrorCode::JudgeRequired,
                  fmt::format("question {}: biography scoring needs a judge", q.id));
    }
    return 0.0;
  }
  switch (q.task) {
    case TaskKind::GradeSchoolMath: {
      const auto* a = std::get_if<Decimal>(&answer);
      const auto* g = std::get_if<Decimal>(&q.gold);
      return a && g && *a == *g ? 1.0 : 0.0;
    }
    case TaskKind::MultipleChoice: {
      const auto* a = std::get_if<Letter>(&answer);
      const auto* g = std::get_if<Letter>(&q.gold);
      return a && g && *a == *g ? 1.0 : 0.0;
    }
    case TaskKind::Biography: {
      if (judge == nullptr || judge->backend == nullptr) {
        throw Error(ErrorCode::JudgeRequired,
                    fmt::format("question {}: biography scoring needs a judge", q.id));
      }
      const auto* a = std::get_if<Bullets>(&answer);
      const auto* g = std::get_if<Bullets>(&q.gold);
      if (!a || !g) return 0.0;
      ChatRequest request;
      request.turns.push_back({Speaker::User, judge_prompt(judge->prompt_template, *g, *a)});
      request.temperature = judge->temperature;
      const auto reply = judge->backend->complete(CallContext{q.id, 0, 0, 0}, request);
      return parse_judge_fraction(reply.content).value_or(0.0);
    }
  }
  return 0.0;
}

ExtractedAnswer majority_vote(std::span<const Vote> votes) {
  struct Bloc {
    ExtractedAnswer value;
    std::size_t count = 0;
    int lowest_index = 0;
  };
  std::vector<Bloc> blocs;
  for (const auto& [index, answer] : votes) {
    if (std::holds_alternative<Unparseable>(answer)) continue;
    auto it = std::find_if(blocs.begin(), blocs.end(),
                           [&](const Bloc& b) { return b.value == answer; });
    if (it == blocs.end()) {
      blocs.push_back({answer, 1, index});
    } else {
      ++it->count;
      it->lowest_index = std::min(it->lowest_index, index);
    }
  }
  if (blocs.empty()) return Unparseable{};
  const auto best = std::min_element(blocs.begin(), blocs.end(), [](const Bloc& a, const Bloc& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.lowest_index < b.lowest_index;
  });
  return best->value;
}

ScoreSummary summarize(std::span<const double> scores, std::optional<std::span<const int>> seed_groups) {
  if (scores.empty()) throw Error(ErrorCode::EmptyInput, "cannot summarize zero scores");
  ScoreSummary s;
  s.n = scores.size();
  long double sum = 0.0L;
  for (double v : scores) sum += v;
  s.correct_fraction = static_cast<double>(sum / static_cast<long double>(s.n));
  s.pct = 100.0 * s.correct_fraction;
  const double p = s.correct_fraction;
  s.se_binomial = 100.0 * std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(s.n));

  if (seed_groups) {
    if (seed_groups->size() != scores.size()) {
      throw Error(ErrorCode::InvalidConfig, "seed partition must label every score");
    }
    std::map<int, std::pair<long double, std::size_t>> groups;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      auto& g = groups[(*seed_groups)[i]];
      g.first += scores[i];
      ++g.second;
    }
    if (groups.size() >= 2) {
      std::vector<double> means;
      for (const auto& [id, g] : groups) {
        means.push_back(100.0 * static_cast<double>(g.first / static_cast<long double>(g.second)));
      }
      long double m = 0.0L;
      for (double v : means) m += v;
      m /= static_cast<long double>(means.size());
      long double ss = 0.0L;
      for (double v : means) ss += (v - m) * (v - m);
      s.sd_seeds = static_cast<double>(std::sqrt(ss / static_cast<long double>(means.size() - 1)));
    }
  }
  return s;
}

}  // namespace dloo

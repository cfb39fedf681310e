#include "dloo/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace dloo {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownAgent: return "UnknownAgent";
    case ErrorCode::TransientHttp: return "TransientHttp";
    case ErrorCode::PermanentHttp: return "PermanentHttp";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::InstructionTooLarge: return "InstructionTooLarge";
    case ErrorCode::MissingChoices: return "MissingChoices";
    case ErrorCode::EmptyPeers: return "EmptyPeers";
    case ErrorCode::MismatchedTranscript: return "MismatchedTranscript";
    case ErrorCode::QuestionSetMismatch: return "QuestionSetMismatch";
    case ErrorCode::JudgeRequired: return "JudgeRequired";
    case ErrorCode::NTooSmall: return "NTooSmall";
    case ErrorCode::TooFewPairs: return "TooFewPairs";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::GoldMissing: return "GoldMissing";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::MissingOriginalRun: return "MissingOriginalRun";
    case ErrorCode::RunExists: return "RunExists";
  }
  return "Unknown";
}

std::string_view to_string(TaskKind task) {
  switch (task) {
    case TaskKind::GradeSchoolMath: return "gsm";
    case TaskKind::MultipleChoice: return "mmlu";
    case TaskKind::Biography: return "biography";
  }
  return "gsm";
}

std::optional<TaskKind> parse_task(std::string_view text) {
  if (text == "gsm") return TaskKind::GradeSchoolMath;
  if (text == "mmlu") return TaskKind::MultipleChoice;
  if (text == "biography") return TaskKind::Biography;
  return std::nullopt;
}

std::optional<Decimal> Decimal::parse(std::string_view text) {
  std::string s;
  s.reserve(text.size());
  for (char c : text) {
    if (c == '$' || c == ',' || std::isspace(static_cast<unsigned char>(c))) continue;
    s.push_back(c);
  }
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s.empty()) return std::nullopt;

  bool negative = false;
  std::size_t pos = 0;
  if (s[0] == '+' || s[0] == '-') {
    negative = s[0] == '-';
    pos = 1;
  }
  std::string int_part;
  std::string frac_part;
  bool seen_point = false;
  for (; pos < s.size(); ++pos) {
    char c = s[pos];
    if (c == '.') {
      if (seen_point) return std::nullopt;
      seen_point = true;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      (seen_point ? frac_part : int_part).push_back(c);
    } else {
      return std::nullopt;
    }
  }
  if (int_part.empty() && frac_part.empty()) return std::nullopt;

  int_part.erase(0, std::min(int_part.find_first_not_of('0'), int_part.size()));
  if (int_part.empty()) int_part = "0";
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();

  std::string canonical = int_part;
  if (!frac_part.empty()) canonical += "." + frac_part;
  if (negative && canonical != "0") canonical.insert(canonical.begin(), '-');
  return Decimal(std::move(canonical));
}

std::vector<std::string> question_violations(const Question& q) {
  std::vector<std::string> out;
  if (q.id.empty()) out.emplace_back("id is empty");
  switch (q.task) {
    case TaskKind::GradeSchoolMath:
      if (!std::holds_alternative<Decimal>(q.gold)) out.emplace_back("gold must be numeric");
      break;
    case TaskKind::MultipleChoice:
      if (q.choices.size() != 4) {
        out.push_back(fmt::format("need 4 choices, got {}", q.choices.size()));
      }
      if (const auto* l = std::get_if<Letter>(&q.gold); !l || l->value < 'A' || l->value > 'D') {
        out.emplace_back("gold must be a letter A-D");
      }
      break;
    case TaskKind::Biography:
      if (const auto* b = std::get_if<Bullets>(&q.gold); !b || b->items.empty()) {
        out.emplace_back("gold must be a non-empty bullet list");
      }
      break;
  }
  return out;
}

std::string_view to_string(Tier tier) {
  return tier == Tier::HighPerforming ? "high" : "under";
}

std::string default_agent_name(int index) { return fmt::format("Agent {}", index); }

const AgentSpec& DebateConfig::agent(int index) const {
  for (const auto& a : agents) {
    if (a.index == index) return a;
  }
  throw Error(ErrorCode::UnknownAgent, fmt::format("unknown agent {}", index));
}

bool DebateConfig::has_agent(int index) const {
  return std::any_of(agents.begin(), agents.end(),
                     [index](const AgentSpec& a) { return a.index == index; });
}

std::vector<int> DebateConfig::agent_indices() const {
  std::vector<int> out;
  out.reserve(agents.size());
  for (const auto& a : agents) out.push_back(a.index);
  std::sort(out.begin(), out.end());
  return out;
}

DebateConfig make_config(int n_agents, int rounds, const std::string& backend_ref,
                         std::uint64_t seed) {
  DebateConfig config;
  for (int i = 1; i <= n_agents; ++i) {
    config.agents.push_back(AgentSpec{i, default_agent_name(i), backend_ref, Tier::HighPerforming});
  }
  config.rounds_total = rounds;
  config.seed = seed;
  return config;
}

std::vector<Violation> validate_config(const DebateConfig& config) {
  std::vector<Violation> out;
  const int n = config.n_agents();
  if (n < 2) out.push_back({"agents", fmt::format("need ≥ 2, got {}", n)});

  std::vector<int> indices = config.agent_indices();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] != static_cast<int>(i) + 1) {
      out.push_back({"agents", "agent indices must be contiguous 1..N"});
      break;
    }
  }
  std::set<std::string> names;
  bool duplicate = false;
  for (const auto& a : config.agents) {
    if (a.name.empty()) out.push_back({"agents", fmt::format("agent {} has no name", a.index)});
    if (!names.insert(a.name).second) duplicate = true;
    if (a.backend_ref.empty()) {
      out.push_back({"agents", fmt::format("agent {} has no backend", a.index)});
    }
  }
  if (duplicate) out.push_back({"agents", "agent names not unique"});
  if (config.rounds_total < 1) {
    out.push_back({"rounds_total", fmt::format("need ≥ 1, got {}", config.rounds_total)});
  }
  if (config.prompt_token_limit <= 0) {
    out.push_back({"prompt_token_limit",
                   fmt::format("prompt_token_limit: need > 0, got {}", config.prompt_token_limit)});
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

std::string config_digest(const DebateConfig& config) {
  nlohmann::json j;
  j["rounds_total"] = config.rounds_total;
  j["temperature"] = config.temperature;
  j["prompt_token_limit"] = config.prompt_token_limit;
  j["seed"] = config.seed;
  auto& agents = j["agents"] = nlohmann::json::array();
  for (const auto& a : config.agents) {
    agents.push_back({{"index", a.index},
                      {"name", a.name},
                      {"backend", a.backend_ref},
                      {"tier", to_string(a.tier)}});
  }
  return fnv1a_hex(j.dump());
}

std::string_view to_string(Role role) { return role == Role::Prompt ? "prompt" : "completion"; }

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::Original: return "original";
    case Variant::Loo: return "loo";
    case Variant::Introspec: return "introspec";
  }
  return "original";
}

std::optional<Role> parse_role(std::string_view text) {
  if (text == "prompt") return Role::Prompt;
  if (text == "completion") return Role::Completion;
  return std::nullopt;
}

std::optional<Variant> parse_variant(std::string_view text) {
  if (text == "original") return Variant::Original;
  if (text == "loo") return Variant::Loo;
  if (text == "introspec") return Variant::Introspec;
  return std::nullopt;
}

std::size_t Transcript::completion_count() const {
  return static_cast<std::size_t>(std::count_if(
      messages.begin(), messages.end(), [](const Message& m) { return m.role == Role::Completion; }));
}

std::size_t Transcript::completion_count(int round) const {
  return static_cast<std::size_t>(
      std::count_if(messages.begin(), messages.end(), [round](const Message& m) {
        return m.role == Role::Completion && m.round == round;
      }));
}

int Transcript::last_round() const {
  int r = 0;
  for (const auto& m : messages) r = std::max(r, m.round);
  return r;
}

std::vector<int> Transcript::participants() const {
  std::set<int> seen;
  for (const auto& m : messages) {
    if (m.role == Role::Completion) seen.insert(m.agent_index);
  }
  return {seen.begin(), seen.end()};
}

const Message* Transcript::completion(int agent, int round) const {
  for (const auto& m : messages) {
    if (m.role == Role::Completion && m.agent_index == agent && m.round == round) return &m;
  }
  return nullptr;
}

std::size_t expected_completions(Variant variant, int n_agents, int rounds) {
  const auto n = static_cast<std::size_t>(n_agents);
  const auto t = static_cast<std::size_t>(rounds);
  switch (variant) {
    case Variant::Original: return n * t;
    case Variant::Loo: return (n - 1) * t;
    case Variant::Introspec: return n * t + (n - 1);
  }
  return 0;
}

}  // namespace dloo

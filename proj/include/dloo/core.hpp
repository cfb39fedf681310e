#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dloo/error.hpp"

namespace dloo {

enum class TaskKind { GradeSchoolMath, MultipleChoice, Biography };

std::string_view to_string(TaskKind task);
std::optional<TaskKind> parse_task(std::string_view text);

// Exact decimal kept in canonical text form: no sign on zero, no leading
// zeros in the integer part, no trailing zeros in the fraction, no grouping.
class Decimal {
 public:
  // Accepts optional "$", thousands commas, surrounding whitespace and a
  // trailing period ("72." -> 72). Returns nullopt for anything else.
  static std::optional<Decimal> parse(std::string_view text);

  [[nodiscard]] const std::string& str() const noexcept { return canonical_; }
  friend bool operator==(const Decimal&, const Decimal&) = default;
  friend auto operator<=>(const Decimal&, const Decimal&) = default;

 private:
  explicit Decimal(std::string canonical) : canonical_(std::move(canonical)) {}
  std::string canonical_;
};

struct Letter {
  char value = 'A';
  friend bool operator==(const Letter&, const Letter&) = default;
  friend auto operator<=>(const Letter&, const Letter&) = default;
};

struct Bullets {
  std::vector<std::string> items;
  friend bool operator==(const Bullets&, const Bullets&) = default;
};

using GoldAnswer = std::variant<Decimal, Letter, Bullets>;

struct Question {
  std::string id;
  TaskKind task = TaskKind::GradeSchoolMath;
  std::string body;  // problem text, or the person's name for Biography
  std::vector<std::string> choices;  // A..D, MultipleChoice only
  GoldAnswer gold = Letter{};

  friend bool operator==(const Question&, const Question&) = default;
};

// Empty when the question's fields agree with its task kind.
std::vector<std::string> question_violations(const Question& q);

enum class Tier { HighPerforming, UnderPerforming };

std::string_view to_string(Tier tier);

struct AgentSpec {
  int index = 1;
  std::string name;  // "Agent {index}" unless overridden
  std::string backend_ref;
  Tier tier = Tier::HighPerforming;

  friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

std::string default_agent_name(int index);

struct DebateConfig {
  std::vector<AgentSpec> agents;
  int rounds_total = 3;  // round 1 independent, rounds 2..T debate
  double temperature = 0.1;
  int prompt_token_limit = 4096;
  std::uint64_t seed = 0;

  [[nodiscard]] int n_agents() const { return static_cast<int>(agents.size()); }
  [[nodiscard]] const AgentSpec& agent(int index) const;
  [[nodiscard]] bool has_agent(int index) const;
  [[nodiscard]] std::vector<int> agent_indices() const;

  friend bool operator==(const DebateConfig&, const DebateConfig&) = default;
};

// Builds a config with agents "Agent 1".."Agent n" all using `backend_ref`.
DebateConfig make_config(int n_agents, int rounds, const std::string& backend_ref,
                         std::uint64_t seed = 0);

struct Violation {
  std::string field;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

std::vector<Violation> validate_config(const DebateConfig& config);

// Stable digest of the debate-relevant fields (hex, 16 chars).
std::string config_digest(const DebateConfig& config);

enum class Role { Prompt, Completion };
enum class Variant { Original, Loo, Introspec };

std::string_view to_string(Role role);
std::string_view to_string(Variant variant);
std::optional<Role> parse_role(std::string_view text);
std::optional<Variant> parse_variant(std::string_view text);

struct Message {
  int round = 1;  // 1..T, or T+1 for the introspection round
  int agent_index = 1;
  Role role = Role::Prompt;
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  friend bool operator==(const Message&, const Message&) = default;
};

struct Transcript {
  std::string run_id;
  std::string question_id;
  std::string config_digest;
  std::optional<int> excluded_agent;
  Variant variant = Variant::Original;
  std::vector<Message> messages;

  [[nodiscard]] std::size_t completion_count() const;
  [[nodiscard]] std::size_t completion_count(int round) const;
  [[nodiscard]] int last_round() const;
  // Agents with at least one completion, ascending.
  [[nodiscard]] std::vector<int> participants() const;
  // Completion of `agent` in `round`, if present.
  [[nodiscard]] const Message* completion(int agent, int round) const;

  friend bool operator==(const Transcript&, const Transcript&) = default;
};

// Closed-form completion count for a transcript of the given shape.
std::size_t expected_completions(Variant variant, int n_agents, int rounds);

// FNV-1a, 64-bit, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace dloo

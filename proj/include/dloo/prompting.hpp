#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dloo/core.hpp"

namespace dloo {

// Templates use `{name}` placeholders. Only names present in the value map are
// substituted, in a single pass, so literal braces such as `\boxed{answer}`
// survive and substituted text is never re-expanded.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

struct PromptTemplateSet {
  std::string initial;    // {question}; MultipleChoice adds {option_a}..{option_d}
  std::string debate;     // {peers}, optionally {question}
  std::string introspec;  // {agent_name}
  std::string peer;       // {agent_name}, {content}
};

class PromptLibrary {
 public:
  // The templates shipped in templates/, compiled into the binary.
  static PromptLibrary builtin();
  // Same layout as templates/: {task}/{initial,debate,introspec}.txt, peer.txt,
  // judge.txt. Missing files fall back to the built-in text.
  static PromptLibrary load_dir(const std::filesystem::path& dir);

  [[nodiscard]] const PromptTemplateSet& set(TaskKind task) const;
  void set(TaskKind task, PromptTemplateSet templates);
  [[nodiscard]] const std::string& judge() const { return judge_; }

 private:
  std::map<TaskKind, PromptTemplateSet> sets_;
  std::string judge_;
};

struct PeerResponse {
  int agent_index = 0;
  std::string agent_name;
  std::string content;
};

std::string initial_prompt(const PromptTemplateSet& templates, const Question& q);
// Peers are listed in ascending agent index whatever order they arrive in.
std::string debate_prompt(const PromptTemplateSet& templates, const Question& q,
                          std::vector<PeerResponse> peers);
std::string introspec_prompt(const PromptTemplateSet& templates, const AgentSpec& excluded);

// "Agent 3" stays "Agent 3"; a custom name "David" is addressed as "Agent David".
std::string agent_reference(const AgentSpec& agent);

std::string judge_prompt(const std::string& judge_template, const Bullets& gold,
                         const Bullets& candidate);

}  // namespace dloo

#include "dloo/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace dloo {

namespace detail {
const std::map<std::string, std::string>& embedded_templates();
}

namespace {

std::string trim_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

std::string embedded(const std::string& name) {
  const auto& files = detail::embedded_templates();
  auto it = files.find(name);
  if (it == files.end()) throw Error(ErrorCode::IoError, "missing built-in template " + name);
  return trim_trailing_newlines(it->second);
}

std::string read_or(const std::filesystem::path& path, const std::string& fallback) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return fallback;
  std::ostringstream ss;
  ss << in.rdbuf();
  return trim_trailing_newlines(ss.str());
}

constexpr TaskKind kTasks[] = {TaskKind::GradeSchoolMath, TaskKind::MultipleChoice,
                               TaskKind::Biography};

}  // namespace

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto it = values.find(std::string(tmpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

PromptLibrary PromptLibrary::builtin() {
  PromptLibrary lib;
  const std::string peer = embedded("peer.txt");
  for (TaskKind t : kTasks) {
    const std::string dir = std::string(to_string(t)) + "/";
    lib.sets_[t] = PromptTemplateSet{embedded(dir + "initial.txt"), embedded(dir + "debate.txt"),
                                     embedded(dir + "introspec.txt"), peer};
  }
  lib.judge_ = embedded("judge.txt");
  return lib;
}

PromptLibrary PromptLibrary::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorCode::IoError, fmt::format("template directory {} not found", dir.string()));
  }
  PromptLibrary lib = builtin();
  for (TaskKind t : kTasks) {
    const auto sub = dir / std::string(to_string(t));
    auto& s = lib.sets_[t];
    s.initial = read_or(sub / "initial.txt", s.initial);
    s.debate = read_or(sub / "debate.txt", s.debate);
    s.introspec = read_or(sub / "introspec.txt", s.introspec);
    s.peer = read_or(dir / "peer.txt", s.peer);
  }
  lib.judge_ = read_or(dir / "judge.txt", lib.judge_);
  return lib;
}

const PromptTemplateSet& PromptLibrary::set(TaskKind task) const { return sets_.at(task); }

void PromptLibrary::set(TaskKind task, PromptTemplateSet templates) {
  sets_[task] = std::move(templates);
}

std::string initial_prompt(const PromptTemplateSet& templates, const Question& q) {
  std::map<std::string, std::string> values{{"question", q.body}};
  if (q.task == TaskKind::MultipleChoice) {
    if (q.choices.size() != 4) {
      throw Error(ErrorCode::MissingChoices,
                  fmt::format("question {} has {} choices, need 4", q.id, q.choices.size()));
    }
    values["option_a"] = q.choices[0];
    values["option_b"] = q.choices[1];
    values["option_c"] = q.choices[2];
    values["option_d"] = q.choices[3];
  }
  return render_template(templates.initial, values);
}

std::string debate_prompt(const PromptTemplateSet& templates, const Question& q,
                          std::vector<PeerResponse> peers) {
  if (peers.empty()) {
    throw Error(ErrorCode::EmptyPeers, fmt::format("question {}: debate prompt needs peers", q.id));
  }
  std::sort(peers.begin(), peers.end(), [](const PeerResponse& a, const PeerResponse& b) {
    return a.agent_index < b.agent_index;
  });
  std::string blocks;
  for (std::size_t i = 0; i < peers.size(); ++i) {
    if (i > 0) blocks += "\n\n";
    blocks += render_template(templates.peer,
                              {{"agent_name", peers[i].agent_name}, {"content", peers[i].content}});
  }
  return render_template(templates.debate, {{"peers", blocks}, {"question", q.body}});
}

std::string agent_reference(const AgentSpec& agent) {
  if (agent.name.rfind("Agent ", 0) == 0) return agent.name;
  return "Agent " + agent.name;
}

std::string introspec_prompt(const PromptTemplateSet& templates, const AgentSpec& excluded) {
  return render_template(templates.introspec, {{"agent_name", agent_reference(excluded)}});
}

std::string judge_prompt(const std::string& judge_template, const Bullets& gold,
                         const Bullets& candidate) {
  auto list = [](const Bullets& b) {
    std::string s;
    for (std::size_t i = 0; i < b.items.size(); ++i) {
      if (i > 0) s += '\n';
      s += "- " + b.items[i];
    }
    return s;
  };
  return render_template(judge_template, {{"gold", list(gold)}, {"candidate", list(candidate)}});
}

}  // namespace dloo

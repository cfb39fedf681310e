#include "dloo/backend.hpp"

#include <algorithm>
#include <thread>
#include <tuple>

#include <fmt/format.h>

#include "dloo/tokenizer.hpp"

namespace dloo {

std::vector<std::string> request_violations(const ChatRequest& request) {
  std::vector<std::string> out;
  if (std::none_of(request.turns.begin(), request.turns.end(),
                   [](const Turn& t) { return t.speaker == Speaker::User; })) {
    out.emplace_back("request needs at least one user turn");
  }
  if (request.max_completion_tokens && *request.max_completion_tokens <= 0) {
    out.emplace_back("max_completion_tokens must be positive");
  }
  return out;
}

std::int64_t request_tokens(const ChatRequest& request) {
  std::int64_t n = request.system ? count_tokens(*request.system) : 0;
  for (const auto& t : request.turns) n += count_tokens(t.content);
  return n;
}

bool ScriptEntry::matches(const CallContext& ctx) const {
  return (!agent || *agent == ctx.agent_index) && (!round || *round == ctx.round) &&
         (!question || *question == ctx.question_id);
}

std::vector<std::string> backend_config_violations(const BackendConfig& config) {
  std::vector<std::string> out;
  if (config.kind == BackendKind::OpenAiCompatible) {
    if (!config.base_url || config.base_url->empty()) {
      out.push_back(fmt::format("backend {}: base_url required", config.id));
    }
    if (config.api_key_env.empty()) {
      out.push_back(fmt::format("backend {}: api_key_env required", config.id));
    }
    if (config.model.empty()) out.push_back(fmt::format("backend {}: model required", config.id));
  } else if (config.script.empty()) {
    out.push_back(fmt::format("backend {}: script required", config.id));
  }
  if (config.retry.max_attempts < 1) {
    out.push_back(fmt::format("backend {}: retry.max_attempts must be ≥ 1", config.id));
  }
  return out;
}

namespace {

std::optional<ErrorCode> parse_failure(const std::string& s) {
  if (s == "transient") return ErrorCode::TransientHttp;
  if (s == "permanent") return ErrorCode::PermanentHttp;
  if (s == "auth") return ErrorCode::AuthMissing;
  throw Error(ErrorCode::InvalidConfig, fmt::format("unknown script failure kind '{}'", s));
}

std::string failure_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::TransientHttp: return "transient";
    case ErrorCode::AuthMissing: return "auth";
    default: return "permanent";
  }
}

}  // namespace

BackendConfig backend_config_from_json(const std::string& id, const nlohmann::json& j) {
  BackendConfig c;
  c.id = id;
  const std::string kind = j.value("kind", "scripted");
  if (kind == "openai") {
    c.kind = BackendKind::OpenAiCompatible;
  } else if (kind == "scripted") {
    c.kind = BackendKind::Scripted;
  } else {
    throw Error(ErrorCode::InvalidConfig, fmt::format("backend {}: unknown kind '{}'", id, kind));
  }
  if (j.contains("base_url")) c.base_url = j.at("base_url").get<std::string>();
  c.model = j.value("model", "");
  c.api_key_env = j.value("api_key_env", "");
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
    c.retry.base_backoff_ms = r.value("base_backoff_ms", c.retry.base_backoff_ms);
  }
  if (j.contains("script")) {
    for (const auto& e : j.at("script")) {
      ScriptEntry entry;
      if (e.contains("agent")) entry.agent = e.at("agent").get<int>();
      if (e.contains("round")) entry.round = e.at("round").get<int>();
      if (e.contains("question")) entry.question = e.at("question").get<std::string>();
      entry.response = e.value("response", "");
      if (e.contains("fail")) entry.fail = parse_failure(e.at("fail").get<std::string>());
      c.script.push_back(std::move(entry));
    }
  }
  return c;
}

nlohmann::json to_json(const BackendConfig& c) {
  nlohmann::json j;
  j["kind"] = c.kind == BackendKind::OpenAiCompatible ? "openai" : "scripted";
  if (c.base_url) j["base_url"] = *c.base_url;
  if (!c.model.empty()) j["model"] = c.model;
  if (!c.api_key_env.empty()) j["api_key_env"] = c.api_key_env;
  j["retry"] = {{"max_attempts", c.retry.max_attempts},
                {"base_backoff_ms", c.retry.base_backoff_ms}};
  j["timeout_ms"] = c.timeout_ms;
  if (!c.script.empty()) {
    auto& script = j["script"] = nlohmann::json::array();
    for (const auto& e : c.script) {
      nlohmann::json s;
      if (e.agent) s["agent"] = *e.agent;
      if (e.round) s["round"] = *e.round;
      if (e.question) s["question"] = *e.question;
      s["response"] = e.response;
      if (e.fail) s["fail"] = failure_name(*e.fail);
      script.push_back(std::move(s));
    }
  }
  return j;
}

ChatResponse ChatBackend::complete(const CallContext& ctx, const ChatRequest& request) {
  ++calls_;
  if (auto v = request_violations(request); !v.empty()) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("backend {}: {}", id_, v.front()));
  }
  return do_complete(ctx, request);
}

ScriptedBackend::ScriptedBackend(std::string id, std::vector<ScriptEntry> script)
    : ChatBackend(std::move(id)), script_(std::move(script)) {}

ScriptedBackend::ScriptedBackend(std::string id, Responder responder)
    : ChatBackend(std::move(id)), responder_(std::move(responder)) {}

ChatResponse ScriptedBackend::do_complete(const CallContext& ctx, const ChatRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  std::optional<std::string> reply;
  if (responder_) {
    reply = responder_(ctx, request);
  } else {
    for (const auto& entry : script_) {
      if (!entry.matches(ctx)) continue;
      if (entry.fail) {
        throw Error(*entry.fail,
                    fmt::format("backend {}: scripted {} failure for question {} agent {} round {}",
                                id(), failure_name(*entry.fail), ctx.question_id,
                                ctx.agent_index, ctx.round));
      }
      reply = entry.response;
      break;
    }
  }
  if (!reply) {
    throw Error(ErrorCode::ScriptExhausted,
                fmt::format("backend {}: no scripted response for question {} agent {} round {}",
                            id(), ctx.question_id, ctx.agent_index, ctx.round));
  }
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

  ChatResponse response;
  response.content = std::move(*reply);
  response.prompt_tokens = request_tokens(request);
  response.completion_tokens = count_tokens(response.content);
  response.backend_id = id();
  response.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
  {
    std::lock_guard lock(mutex_);
    log_.push_back({ctx, response.prompt_tokens, response.completion_tokens});
  }
  return response;
}

std::vector<ScriptedBackend::CallRecord> ScriptedBackend::call_log() const {
  std::vector<CallRecord> out;
  {
    std::lock_guard lock(mutex_);
    out = log_;
  }
  std::stable_sort(out.begin(), out.end(), [](const CallRecord& a, const CallRecord& b) {
    return std::tie(a.ctx.question_id, a.ctx.round, a.ctx.agent_index) <
           std::tie(b.ctx.question_id, b.ctx.round, b.ctx.agent_index);
  });
  return out;
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config) {
  if (auto v = backend_config_violations(config); !v.empty()) {
    throw Error(ErrorCode::InvalidConfig, v.front());
  }
  if (config.kind == BackendKind::Scripted) {
    return std::make_shared<ScriptedBackend>(config.id, config.script);
  }
  return std::make_shared<OpenAiBackend>(config);
}

void BackendRegistry::add(std::shared_ptr<ChatBackend> backend) {
  const std::string id = backend->id();
  backends_[id] = std::move(backend);
}

ChatBackend& BackendRegistry::get(const std::string& ref) const { return *shared(ref); }

std::shared_ptr<ChatBackend> BackendRegistry::shared(const std::string& ref) const {
  auto it = backends_.find(ref);
  if (it == backends_.end()) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("unknown backend '{}'", ref));
  }
  return it->second;
}

std::int64_t BackendRegistry::total_calls() const {
  std::int64_t n = 0;
  for (const auto& [id, b] : backends_) n += b->calls();
  return n;
}

std::vector<Turn> truncate_prompt(const std::vector<Turn>& turns, std::int64_t limit) {
  if (limit <= 0) throw Error(ErrorCode::InvalidConfig, "truncation limit must be positive");
  if (turns.empty()) return turns;

  std::int64_t total = 0;
  for (const auto& t : turns) total += count_tokens(t.content);
  if (total <= limit) return turns;

  const std::int64_t instruction = count_tokens(turns.back().content);
  if (instruction > limit) {
    throw Error(ErrorCode::InstructionTooLarge,
                fmt::format("instruction alone is {} tokens, limit {}", instruction, limit));
  }

  std::vector<Turn> out;
  std::int64_t excess = total - limit;
  for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
    const std::int64_t n = count_tokens(turns[i].content);
    if (excess <= 0) {
      out.push_back(turns[i]);
    } else if (n <= excess) {
      excess -= n;
    } else {
      Turn cut = turns[i];
      cut.content.erase(0, token_offset(cut.content, excess));
      excess = 0;
      out.push_back(std::move(cut));
    }
  }
  out.push_back(turns.back());
  return out;
}

}  // namespace dloo

#include <httplib.h>

#include <cstdlib>
#include <thread>

#include <fmt/format.h>

#include "dloo/backend.hpp"
#include "dloo/log.hpp"

namespace dloo {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("base_url '{}' has no scheme", url));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

nlohmann::json request_body(const BackendConfig& config, const ChatRequest& request) {
  nlohmann::json messages = nlohmann::json::array();
  if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
  for (const auto& t : request.turns) {
    messages.push_back(
        {{"role", t.speaker == Speaker::User ? "user" : "assistant"}, {"content", t.content}});
  }
  nlohmann::json body = {{"model", config.model},
                         {"messages", std::move(messages)},
                         {"temperature", request.temperature}};
  if (request.max_completion_tokens) body["max_tokens"] = *request.max_completion_tokens;
  return body;
}

bool is_transient(int status) { return status == 429 || status >= 500; }

}  // namespace

OpenAiBackend::OpenAiBackend(BackendConfig config, Sleeper sleeper)
    : ChatBackend(config.id), config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatResponse OpenAiBackend::do_complete(const CallContext& ctx, const ChatRequest& request) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw Error(ErrorCode::AuthMissing,
                fmt::format("backend {}: environment variable {} is not set", id(),
                            config_.api_key_env));
  }
  const Endpoint endpoint = split_url(config_.base_url.value_or(""));
  const std::string body = request_body(config_, request).dump();
  const std::string path = endpoint.path + "/chat/completions";

  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      const auto backoff = std::chrono::milliseconds(
          static_cast<std::int64_t>(config_.retry.base_backoff_ms) << (attempt - 2));
      log_debug(fmt::format("backend {}: retry {} after {} ms ({})", id(), attempt,
                            backoff.count(), last_error));
      sleeper_(backoff);
    }
    httplib::Client client(endpoint.origin);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - start);

    if (!res) {
      last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
      continue;
    }
    if (is_transient(res->status)) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::PermanentHttp,
                  fmt::format("backend {}: HTTP {} for question {} agent {} round {}", id(),
                              res->status, ctx.question_id, ctx.agent_index, ctx.round));
    }

    ChatResponse out;
    try {
      const auto j = nlohmann::json::parse(res->body);
      const auto& message = j.at("choices").at(0).at("message");
      out.content = message.contains("content") && message.at("content").is_string()
                        ? message.at("content").get<std::string>()
                        : std::string();
      const auto& usage = j.at("usage");
      out.prompt_tokens = usage.at("prompt_tokens").get<std::int64_t>();
      out.completion_tokens = usage.at("completion_tokens").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::PermanentHttp,
                  fmt::format("backend {}: malformed completion response: {}", id(), e.what()));
    }
    out.backend_id = id();
    out.latency_ms = elapsed.count();
    return out;
  }
  throw Error(ErrorCode::TransientHttp,
              fmt::format("backend {}: gave up after {} attempts ({})", id(),
                          config_.retry.max_attempts, last_error));
}

}  // namespace dloo

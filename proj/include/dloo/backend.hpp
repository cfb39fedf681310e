#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dloo/error.hpp"

namespace dloo {

enum class Speaker { User, Assistant };

struct Turn {
  Speaker speaker = Speaker::User;
  std::string content;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct ChatRequest {
  std::optional<std::string> system;
  std::vector<Turn> turns;
  double temperature = 0.1;
  std::optional<int> max_completion_tokens;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

std::vector<std::string> request_violations(const ChatRequest& request);

// Synthetic-tokenizer count of everything a backend would read: the system
// text plus every turn.
std::int64_t request_tokens(const ChatRequest& request);

struct ChatResponse {
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::string backend_id;
  std::int64_t latency_ms = 0;
};

// Who is asking. Agent 0 / round 0 denotes a judge call.
struct CallContext {
  std::string question_id;
  int agent_index = 0;
  int round = 0;
  std::uint64_t seed = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
};

enum class BackendKind { OpenAiCompatible, Scripted };

// One scripted reply. Unset selectors match anything; the first matching
// entry in declaration order wins. `fail` turns the entry into an error.
struct ScriptEntry {
  std::optional<int> agent;
  std::optional<int> round;
  std::optional<std::string> question;
  std::string response;
  std::optional<ErrorCode> fail;

  [[nodiscard]] bool matches(const CallContext& ctx) const;
};

struct BackendConfig {
  std::string id;
  BackendKind kind = BackendKind::Scripted;
  std::optional<std::string> base_url;
  std::string model;
  std::string api_key_env;
  std::vector<ScriptEntry> script;
  RetryPolicy retry;
  int timeout_ms = 120000;
};

std::vector<std::string> backend_config_violations(const BackendConfig& config);
BackendConfig backend_config_from_json(const std::string& id, const nlohmann::json& j);
// Never contains a key value, only the name of the variable that holds it.
nlohmann::json to_json(const BackendConfig& config);

class ChatBackend {
 public:
  explicit ChatBackend(std::string id) : id_(std::move(id)) {}
  virtual ~ChatBackend() = default;
  ChatBackend(const ChatBackend&) = delete;
  ChatBackend& operator=(const ChatBackend&) = delete;

  // Thread-safe. Counts every call, including ones that end in an error.
  ChatResponse complete(const CallContext& ctx, const ChatRequest& request);

  [[nodiscard]] const std::string& id() const noexcept { return id_; }
  [[nodiscard]] std::int64_t calls() const noexcept { return calls_.load(); }

 protected:
  virtual ChatResponse do_complete(const CallContext& ctx, const ChatRequest& request) = 0;

 private:
  std::string id_;
  std::atomic<std::int64_t> calls_{0};
};

// Deterministic backend for tests and dry scenarios. Replies are a pure
// function of the call context (and, for responders, the request), so
// concurrent debates stay reproducible whatever order calls arrive in.
class ScriptedBackend final : public ChatBackend {
 public:
  using Responder =
      std::function<std::optional<std::string>(const CallContext&, const ChatRequest&)>;

  struct CallRecord {
    CallContext ctx;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
  };

  ScriptedBackend(std::string id, std::vector<ScriptEntry> script);
  ScriptedBackend(std::string id, Responder responder);

  // Simulated per-call latency (benchmarks only).
  void set_latency(std::chrono::microseconds latency) { latency_ = latency; }

  // Sorted by (question, round, agent) so logs compare across schedules.
  [[nodiscard]] std::vector<CallRecord> call_log() const;

 protected:
  ChatResponse do_complete(const CallContext& ctx, const ChatRequest& request) override;

 private:
  std::vector<ScriptEntry> script_;
  Responder responder_;
  std::chrono::microseconds latency_{0};
  mutable std::mutex mutex_;
  std::vector<CallRecord> log_;
};

// OpenAI-compatible `POST {base_url}/chat/completions`.
class OpenAiBackend final : public ChatBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit OpenAiBackend(BackendConfig config, Sleeper sleeper = {});

 protected:
  ChatResponse do_complete(const CallContext& ctx, const ChatRequest& request) override;

 private:
  BackendConfig config_;
  Sleeper sleeper_;
};

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config);

class BackendRegistry {
 public:
  void add(std::shared_ptr<ChatBackend> backend);
  [[nodiscard]] ChatBackend& get(const std::string& ref) const;
  [[nodiscard]] std::shared_ptr<ChatBackend> shared(const std::string& ref) const;
  [[nodiscard]] bool contains(const std::string& ref) const { return backends_.count(ref) != 0; }
  [[nodiscard]] std::int64_t total_calls() const;

 private:
  std::map<std::string, std::shared_ptr<ChatBackend>> backends_;
};

// Head-truncates the oldest turns until the total token count fits `limit`.
// The final turn (the current instruction) is never modified.
std::vector<Turn> truncate_prompt(const std::vector<Turn>& turns, std::int64_t limit);

}  // namespace dloo

#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dloo/backend.hpp"
#include "dloo/core.hpp"
#include "dloo/parallel.hpp"
#include "dloo/prompting.hpp"

namespace dloo {

struct DebateEnv {
  const BackendRegistry& backends;
  const PromptLibrary& prompts;
};

// Per-agent conversation histories plus the round they have reached. After
// round r every active agent holds exactly r assistant turns.
struct DebateState {
  std::map<int, std::vector<Turn>> histories;
  int round = 0;

  [[nodiscard]] std::size_t assistant_turns(int agent) const;
};

// Replays the Prompt/Completion messages of a transcript into histories.
DebateState replay_state(const Transcript& transcript);

// One synchronous debate. Round 1 sends each active agent the independent
// prompt; round r > 1 sends the round r-1 answers of the other active agents.
// Every agent in a round sees the same frozen snapshot of the previous round.
Transcript run_debate(const DebateConfig& config, const Question& q, std::vector<int> active,
                      const DebateEnv& env, const std::string& run_id);

struct BatchOptions {
  int parallel = 1;
  bool keep_going = false;
};

struct BatchFailure {
  std::size_t index = 0;
  std::string question_id;
  ErrorCode code = ErrorCode::IoError;
  std::string message;
};

template <class T>
struct IndexedResults {
  std::vector<T> values;  // successes, in input order
  std::vector<BatchFailure> failures;
};

using BatchResult = IndexedResults<Transcript>;

// Evaluates make(i) for every index, in parallel when options.parallel > 1.
// Results are merged by index, so output order never depends on scheduling.
// Without keep_going the first failing index (in input order) is rethrown.
template <class T, class Make, class IdOf>
IndexedResults<T> run_indexed(std::size_t n, const BatchOptions& options, Make&& make,
                              IdOf&& id_of, bool serial = false) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::optional<BatchFailure>> errors(n);
  std::atomic<bool> stop{false};

  const std::function<void(std::size_t)> body = [&](std::size_t i) {
    if (stop.load()) return;
    try {
      slots[i].emplace(make(i));
    } catch (const Error& e) {
      errors[i] = BatchFailure{i, id_of(i), e.code(), e.what()};
    } catch (const std::exception& e) {
      errors[i] = BatchFailure{i, id_of(i), ErrorCode::IoError, e.what()};
    }
    if (errors[i] && !options.keep_going) stop.store(true);
  };
  if (serial) {
    for_each_index_serial(n, body);
  } else {
    for_each_index(n, options.parallel, body);
  }

  IndexedResults<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      if (!options.keep_going) {
        throw Error(errors[i]->code,
                    fmt::format("question {}: {}", errors[i]->question_id, errors[i]->message));
      }
      out.failures.push_back(std::move(*errors[i]));
    } else if (slots[i]) {
      out.values.push_back(std::move(*slots[i]));
    }
  }
  return out;
}

// One transcript per question, in input order.
BatchResult run_batch(const DebateConfig& config, const std::vector<Question>& questions,
                      const std::vector<int>& active, const DebateEnv& env,
                      const std::string& run_id, const BatchOptions& options);

// Serial reference for run_batch; same contract, single thread, in order.
BatchResult run_batch_serial(const DebateConfig& config, const std::vector<Question>& questions,
                             const std::vector<int>& active, const DebateEnv& env,
                             const std::string& run_id, const BatchOptions& options);

}  // namespace dloo

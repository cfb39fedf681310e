// Serial reference vs OpenMP question-level batching, with a simulated
// per-call backend latency.
#include <benchmark/benchmark.h>

#include "dloo/debate.hpp"

namespace {

using namespace dloo;

struct Setup {
  BackendRegistry registry;
  PromptLibrary prompts = PromptLibrary::builtin();
  DebateConfig config = make_config(3, 3, "mock");
  std::vector<Question> questions;

  explicit Setup(int latency_us, int n_questions) {
    auto backend = std::make_shared<ScriptedBackend>(
        "mock", [](const CallContext& c, const ChatRequest&) -> std::optional<std::string> {
          return "Step by step the result is \\boxed{" + std::to_string(c.agent_index * 10 + c.round) + "}";
        });
    backend->set_latency(std::chrono::microseconds(latency_us));
    registry.add(backend);
    for (int i = 0; i < n_questions; ++i) {
      Question q;
      q.id = "q" + std::to_string(i);
      q.body = "What is " + std::to_string(i) + " plus 1?";
      q.gold = *Decimal::parse(std::to_string(i + 1));
      questions.push_back(q);
    }
  }
};

void BM_BatchSerial(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), 32);
  const DebateEnv env{s.registry, s.prompts};
  for (auto _ : state) {
    auto r = run_batch_serial(s.config, s.questions, {1, 2, 3}, env, "bench", {1, false});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.questions.size()));
}

void BM_BatchParallel(benchmark::State& state) {
  Setup s(static_cast<int>(state.range(0)), 32);
  const DebateEnv env{s.registry, s.prompts};
  const int threads = static_cast<int>(state.range(1));
  for (auto _ : state) {
    auto r = run_batch(s.config, s.questions, {1, 2, 3}, env, "bench", {threads, false});
    benchmark::DoNotOptimize(r);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.questions.size()));
  state.counters["threads"] = threads;
}

}  // namespace

BENCHMARK(BM_BatchSerial)->Arg(0)->Arg(200)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BatchParallel)
    ->ArgsProduct({{0, 200}, {2, 4, 8}})
    ->Unit(benchmark::kMillisecond)
    ->UseRealTime();

BENCHMARK_MAIN();

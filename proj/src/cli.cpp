#include "dloo/cli.hpp"

#include <cmath>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dloo/analysis.hpp"
#include "dloo/debate.hpp"
#include "dloo/log.hpp"
#include "dloo/loo.hpp"
#include "dloo/store.hpp"

namespace dloo::cli {

using nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput:
    case ErrorCode::TooFewPairs:
    case ErrorCode::QuestionSetMismatch:
    case ErrorCode::MismatchedTranscript:
      return kExitAnalysisInput;
    case ErrorCode::ScriptExhausted:
    case ErrorCode::TransientHttp:
    case ErrorCode::PermanentHttp:
      return kExitBackend;
    default:
      return kExitUsage;
  }
}

namespace {

struct Flags {
  std::string config;
  std::string task;
  std::string dataset;
  int rounds = 3;
  std::string exclude;
  std::string run;
  std::string out;
  std::size_t sample = 0;
  std::uint64_t seed = 0;
  int parallel = 1;
  bool dry_run = false;
  bool keep_going = false;
  bool force = false;
  std::vector<std::string> cells;
  std::vector<std::string> loo_runs;
  std::vector<std::string> introspec_runs;
};

// Everything a command needs after merging the config file with flags.
struct Setup {
  json raw;  // config file contents ({} when none)
  fs::path config_dir;
  DebateConfig debate;
  std::map<std::string, BackendConfig> backends;
  std::optional<std::string> judge;
  std::string templates_dir;
  std::optional<TaskKind> task;
  std::string dataset;
  std::optional<std::size_t> sample;
  std::uint64_t seed = 0;
  int parallel = 1;
  std::string out;
  std::string exclude;
  std::string run;
  bool dry_run = false;
  bool keep_going = false;
  bool force = false;
};

class Command {
 public:
  Command(CLI::App* app, const Flags& flags) : app_(app), flags_(flags) {}

  [[nodiscard]] bool given(const char* flag) const {
    const auto* opt = app_->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  }

  template <class T>
  T pick(const char* flag, const T& flag_value, const json& cfg, const char* key,
         const T& fallback) const {
    if (given(flag)) return flag_value;
    if (cfg.contains(key) && !cfg[key].is_null()) return cfg[key].get<T>();
    return fallback;
  }

  [[nodiscard]] const Flags& flags() const { return flags_; }

 private:
  CLI::App* app_;
  const Flags& flags_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

TaskKind require_task(const std::string& text) {
  auto t = parse_task(text);
  if (!t) throw Error(ErrorCode::InvalidConfig, fmt::format("unknown task '{}' (gsm|mmlu|biography)", text));
  return *t;
}

void load_backends(const json& j, Setup& s) {
  if (!j.contains("backends")) return;
  for (const auto& [id, b] : j.at("backends").items()) {
    BackendConfig bc = backend_config_from_json(id, b);
    if (auto v = backend_config_violations(bc); !v.empty()) {
      throw Error(ErrorCode::InvalidConfig, fmt::format("backend {}: {}", id, v.front()));
    }
    s.backends[id] = std::move(bc);
  }
}

Setup make_setup(const Command& cmd) {
  const Flags& f = cmd.flags();
  Setup s;
  s.raw = json::object();
  if (!f.config.empty()) {
    const fs::path path(f.config);
    if (!fs::exists(path)) throw Error(ErrorCode::IoError, fmt::format("config not found: {}", f.config));
    s.raw = json::parse(read_file(path), nullptr, false);
    if (s.raw.is_discarded() || !s.raw.is_object()) {
      throw Error(ErrorCode::InvalidConfig, fmt::format("{}: not a JSON object", f.config));
    }
    s.config_dir = path.parent_path();
    load_backends(s.raw, s);
    if (s.raw.contains("agents")) s.debate = debate_config_from_json(s.raw);
    if (s.raw.contains("judge") && !s.raw["judge"].is_null()) s.judge = s.raw["judge"].get<std::string>();
    if (s.raw.contains("templates_dir")) {
      s.templates_dir = resolve(s.config_dir, s.raw["templates_dir"].get<std::string>()).string();
    }
  }
  const json& c = s.raw;
  const std::string task = cmd.pick<std::string>("--task", f.task, c, "task", "");
  if (!task.empty()) s.task = require_task(task);
  s.dataset = cmd.given("--dataset") ? f.dataset
                                     : resolve(s.config_dir, c.value("dataset", std::string())).string();
  s.debate.rounds_total = cmd.pick<int>("--rounds", f.rounds, c, "rounds", s.debate.rounds_total);
  const auto sample = cmd.pick<std::size_t>("--sample", f.sample, c, "sample", 0);
  if (sample > 0) s.sample = sample;
  s.seed = cmd.pick<std::uint64_t>("--seed", f.seed, c, "seed", 0);
  s.debate.seed = s.seed;
  s.parallel = cmd.pick<int>("--parallel", f.parallel, c, "parallel", 1);
  s.out = cmd.pick<std::string>("--out", f.out, c, "out", "runs");
  s.exclude = cmd.pick<std::string>("--exclude", f.exclude, c, "exclude", "");
  s.run = cmd.pick<std::string>("--run", f.run, c, "run", "");
  s.dry_run = cmd.pick<bool>("--dry-run", f.dry_run, c, "dry_run", false);
  s.keep_going = cmd.pick<bool>("--keep-going", f.keep_going, c, "keep_going", false);
  s.force = cmd.pick<bool>("--force", f.force, c, "force", false);
  if (s.parallel < 1) throw Error(ErrorCode::InvalidConfig, "--parallel must be ≥ 1");
  return s;
}

void check_debate_config(const Setup& s) {
  if (auto v = validate_config(s.debate); !v.empty()) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("{}: {}", v.front().field, v.front().message));
  }
  for (const auto& a : s.debate.agents) {
    if (!s.backends.count(a.backend_ref)) {
      throw Error(ErrorCode::InvalidConfig,
                  fmt::format("agent {} uses undefined backend '{}'", a.index, a.backend_ref));
    }
  }
  if (s.judge && !s.backends.count(*s.judge)) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("judge uses undefined backend '{}'", *s.judge));
  }
}

BackendRegistry make_registry(const std::map<std::string, BackendConfig>& backends) {
  BackendRegistry r;
  for (const auto& [id, b] : backends) r.add(make_backend(b));
  return r;
}

PromptLibrary make_prompts(const std::string& dir) {
  return dir.empty() ? PromptLibrary::builtin() : PromptLibrary::load_dir(dir);
}

std::optional<Judge> make_judge(const Setup& s, const BackendRegistry& reg, const PromptLibrary& prompts) {
  if (!s.judge) return std::nullopt;
  return Judge{&reg.get(*s.judge), prompts.judge(), 0.0};
}

std::vector<int> parse_exclude(const std::string& text, const DebateConfig& config) {
  if (text.empty()) throw Error(ErrorCode::InvalidConfig, "--exclude is required (agent index or 'all')");
  if (text == "all") return config.agent_indices();
  int k = 0;
  try {
    std::size_t used = 0;
    k = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("--exclude expects an agent index or 'all', got '{}'", text));
  }
  if (!config.has_agent(k)) {
    throw Error(ErrorCode::UnknownAgent,
                fmt::format("cannot exclude agent {}: config has agents 1..{}", k, config.n_agents()));
  }
  return {k};
}

std::string composition(const DebateConfig& config) {
  int under = 0, high = 0;
  for (const auto& a : config.agents) (a.tier == Tier::UnderPerforming ? under : high)++;
  return fmt::format("{}:{}", under, high);
}

std::string make_run_id(std::string_view prefix, TaskKind task, const DebateConfig& config,
                        const std::string& dataset_digest, const std::vector<std::string>& ids,
                        const std::optional<std::string>& base) {
  std::string key = config_digest(config) + "|" + dataset_digest + "|" + base.value_or("");
  for (const auto& id : ids) key += "|" + id;
  return fmt::format("{}-{}-{}", prefix, to_string(task), fnv1a_hex(key).substr(0, 10));
}

json summary_json(const ScoreSummary& s) {
  json j = {{"n", s.n}, {"pct", s.pct}, {"correct_fraction", s.correct_fraction}, {"se_binomial", s.se_binomial}};
  if (s.sd_seeds) j["sd_seeds"] = *s.sd_seeds;
  return j;
}

json params_json(const TokenParams& p) {
  return {{"N", p.n_agents}, {"T", p.rounds}, {"Q", p.q_prompt}, {"R", p.r_completion}, {"C", p.c_introspec}};
}

json totals_json(const TokenTotals& t) {
  return {{"calls", t.calls},
          {"prompt_tokens", t.prompt_tokens},
          {"completion_tokens", t.completion_tokens},
          {"billed_prompt_tokens", t.billed_prompt_tokens},
          {"total", t.modeled_total()},
          {"billed_total", t.billed_total()}};
}

json cost_json(const CostComparison& c, const TokenParams& p, const TokenTotals& t) {
  json j = {{"variant", std::string(to_string(c.variant))},
            {"questions", c.questions},
            {"params", params_json(p)},
            {"measured", totals_json(t)},
            {"predicted_total", c.predicted_tokens},
            {"ratio", c.ratio}};
  // Reference predictions for the other methods at the same parameters.
  auto& ref = j["predicted_per_question"] = json::object();
  ref["original"] = predicted_tokens_original(p);
  if (p.n_agents >= 3) ref["loo"] = predicted_tokens_loo(p);
  ref["introspec"] = predicted_tokens_introspec(p);
  return j;
}

void print_cost(std::ostream& out, const CostComparison& c) {
  out << fmt::format("  tokens: measured {} predicted {} (ratio {:.3f}); calls {}\n", c.measured_tokens,
                     c.predicted_tokens, c.ratio, c.measured_calls);
}

json failures_json(const std::vector<BatchFailure>& failures) {
  json j = json::array();
  for (const auto& f : failures) {
    j.push_back({{"question_id", f.question_id}, {"code", std::string(to_string(f.code))}, {"message", f.message}});
  }
  return j;
}

int failure_exit(const std::vector<BatchFailure>& failures, std::ostream& err) {
  if (failures.empty()) return kExitOk;
  err << fmt::format("{} question(s) failed; first: {} ({})\n", failures.size(),
                     failures.front().question_id, failures.front().message);
  return exit_code_for(failures.front().code);
}

std::vector<Question> select_questions(const Setup& s, std::string& digest) {
  if (!s.task) throw Error(ErrorCode::InvalidConfig, "--task is required");
  if (s.dataset.empty()) throw Error(ErrorCode::InvalidConfig, "--dataset is required");
  auto questions = load_dataset(s.dataset, *s.task);
  digest = dataset_digest(s.dataset);
  if (s.sample) questions = sample_questions(std::move(questions), *s.sample, s.seed);
  return questions;
}

std::vector<std::string> ids_of(const std::vector<Question>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) out.push_back(q.id);
  return out;
}

// Reloads the questions a stored run was made on, in the stored order.
std::vector<Question> questions_for(const RunManifest& m) {
  auto all = load_dataset(m.dataset_path, m.task);
  if (dataset_digest(m.dataset_path) != m.dataset_digest) {
    log_warn(fmt::format("dataset {} changed since run {}", m.dataset_path, m.run_id));
  }
  std::map<std::string, Question> by_id;
  for (auto& q : all) by_id.emplace(q.id, std::move(q));
  std::vector<Question> out;
  for (const auto& id : m.question_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::QuestionSetMismatch, fmt::format("question {} of run {} is missing from {}", id,
                                                              m.run_id, m.dataset_path));
    }
    out.push_back(it->second);
  }
  return out;
}

struct BaseRun {
  fs::path dir;
  RunManifest manifest;
  std::vector<Transcript> transcripts;
};

BaseRun load_base(const std::string& dir) {
  if (dir.empty()) throw Error(ErrorCode::MissingOriginalRun, "--run <original run directory> is required");
  BaseRun b;
  b.dir = dir;
  b.manifest = read_manifest(b.dir);
  if (b.manifest.variant != Variant::Original) {
    throw Error(ErrorCode::MissingOriginalRun,
                fmt::format("{} is a {} run, not an original debate", dir, to_string(b.manifest.variant)));
  }
  b.transcripts = load_transcripts(b.dir);
  return b;
}

// The base run fixes the team; a config file may still swap in backends,
// judge and templates (e.g. to re-point an endpoint).
void adopt_base(Setup& s, const BaseRun& base) {
  s.debate = base.manifest.config;
  s.task = base.manifest.task;
  if (s.backends.empty()) s.backends = base.manifest.backends;
  if (!s.judge) s.judge = base.manifest.judge_backend;
  if (s.templates_dir.empty()) s.templates_dir = base.manifest.templates_dir;
}

std::vector<TableCell> report_cells(const ContributionReport& r, const std::string& table,
                                    const DebateConfig& config) {
  std::vector<TableCell> out;
  auto cell = [&](const std::string& scope, const ScoreTriple& t) {
    TableCell c;
    c.table = table;
    c.dataset = std::string(to_string(r.task));
    c.n_agents = config.n_agents();
    c.composition = composition(config);
    c.excluded = r.excluded_agent;
    c.scope = scope;
    const double nan = std::nan("");
    c.original = t.original ? t.original->pct : nan;
    c.loo = t.loo ? t.loo->pct : nan;
    c.introspec = t.introspec ? t.introspec->pct : nan;
    out.push_back(std::move(c));
  };
  for (const auto& [agent, t] : r.per_agent) cell(fmt::format("agent-{}", agent), t);
  cell("overall", r.overall);
  return out;
}

// One row per (method, scope) summary: dataset,n_agents,excluded,method,scope,pct,se_binomial,sd_seeds,n
std::string scores_csv(const ContributionReport& r, const DebateConfig& config) {
  std::string out = csv_row(std::vector<std::string>{"dataset", "n_agents", "excluded", "method", "scope", "pct",
                                                     "se_binomial", "sd_seeds", "n"});
  auto row = [&](const std::string& scope, const char* method, const std::optional<ScoreSummary>& s) {
    if (!s) return;
    out += csv_row(std::vector<std::string>{
        std::string(to_string(r.task)), std::to_string(config.n_agents()),
        r.excluded_agent ? std::to_string(r.excluded_agent) : "", method, scope, fmt::format("{:.4f}", s->pct),
        fmt::format("{:.4f}", s->se_binomial), s->sd_seeds ? fmt::format("{:.4f}", *s->sd_seeds) : "",
        std::to_string(s->n)});
  };
  auto triple = [&](const std::string& scope, const ScoreTriple& t) {
    row(scope, "original", t.original);
    row(scope, "loo", t.loo);
    row(scope, "introspec", t.introspec);
  };
  for (const auto& [agent, t] : r.per_agent) triple(fmt::format("agent-{}", agent), t);
  triple("overall", r.overall);
  return out;
}

json triple_json(const ScoreTriple& t) {
  json j = json::object();
  if (t.original) j["original"] = summary_json(*t.original);
  if (t.loo) j["loo"] = summary_json(*t.loo);
  if (t.introspec) j["introspec"] = summary_json(*t.introspec);
  if (auto d = t.delta_loo()) j["delta_loo"] = *d;
  if (auto d = t.delta_introspec()) j["delta_introspec"] = *d;
  return j;
}

json report_json(const ContributionReport& r) {
  json j = {{"task", std::string(to_string(r.task))}, {"n_agents", r.n_agents}, {"excluded_agent", r.excluded_agent}};
  auto& per = j["per_agent"] = json::object();
  for (const auto& [agent, t] : r.per_agent) per[fmt::format("agent-{}", agent)] = triple_json(t);
  j["overall"] = triple_json(r.overall);
  return j;
}

void print_report(std::ostream& out, const ContributionReport& r, Method method) {
  auto line = [&](const std::string& scope, const ScoreTriple& t) {
    const auto& other = method == Method::Loo ? t.loo : t.introspec;
    out << fmt::format("  {:<10} original {:>6} {:<10} {:>6}\n", scope,
                       t.original ? fmt::format("{:.1f}", t.original->pct) : "-", to_string(method),
                       other ? fmt::format("{:.1f}", other->pct) : "-");
  };
  for (const auto& [agent, t] : r.per_agent) line(fmt::format("agent-{}", agent), t);
  line("overall", r.overall);
}

RunManifest base_manifest(const Setup& s, std::string run_id, Variant variant, std::optional<int> excluded) {
  RunManifest m;
  m.run_id = std::move(run_id);
  m.created_at = utc_timestamp();
  m.task = *s.task;
  m.variant = variant;
  m.excluded_agent = excluded;
  m.config = s.debate;
  m.backends = s.backends;
  m.judge_backend = s.judge;
  m.templates_dir = s.templates_dir;
  m.sample = s.sample;
  m.sample_seed = s.seed;
  return m;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// ---- run ---------------------------------------------------------------

int cmd_run(const Command& cmd, std::ostream& out, std::ostream& err) {
  Setup s = make_setup(cmd);
  check_debate_config(s);
  std::string digest;
  const auto questions = select_questions(s, digest);
  const auto ids = ids_of(questions);
  const int n = s.debate.n_agents(), t = s.debate.rounds_total;

  if (s.dry_run) {
    const auto per_q = static_cast<std::int64_t>(expected_completions(Variant::Original, n, t));
    out << json({{"command", "run"}, {"questions", questions.size()}, {"n_agents", n}, {"rounds", t},
                 {"calls_per_question", per_q},
                 {"total_calls", per_q * static_cast<std::int64_t>(questions.size())}})
               .dump(2)
        << "\n";
    return kExitOk;
  }

  const std::string run_id = make_run_id("orig", *s.task, s.debate, digest, ids, std::nullopt);
  const fs::path dir = prepare_run_dir(s.out, run_id, s.force);
  RunManifest manifest = base_manifest(s, run_id, Variant::Original, std::nullopt);
  manifest.dataset_path = fs::absolute(s.dataset).string();
  manifest.dataset_digest = digest;
  manifest.question_ids = ids;
  write_manifest(dir, manifest);

  const auto registry = make_registry(s.backends);
  const auto prompts = make_prompts(s.templates_dir);
  const DebateEnv env{registry, prompts};
  const auto batch = run_batch(s.debate, questions, s.debate.agent_indices(), env, run_id,
                               BatchOptions{s.parallel, s.keep_going});
  save_transcripts(batch.values, dir);
  if (!batch.failures.empty()) write_json(dir / "failures.json", failures_json(batch.failures));

  const auto judge = make_judge(s, registry, prompts);
  const auto ledger = TokenLedger::from_transcripts(batch.values);
  const auto params = estimate_params(ledger, TokenLedger{});
  const auto n_done = static_cast<std::int64_t>(batch.values.size());
  out << fmt::format("run {} ({} questions, N={}, T={})\n", run_id, n_done, n, t);
  if (n_done > 0) {
    const auto scores = score_runs(*s.task, questions, batch.values, judge ? &*judge : nullptr);
    ContributionReport r;
    r.task = *s.task;
    r.n_agents = n;
    for (const auto& [agent, sum] : scores.per_agent) r.per_agent[agent].original = sum;
    r.overall.original = scores.overall;
    auto cells = report_cells(r, run_id, s.debate);
    write_file(dir / kResultsFile, cells_csv(cells));
    write_file(dir / "scores.csv", scores_csv(r, s.debate));
    json rep = report_json(r);
    rep.erase("excluded_agent");
    write_json(dir / "report.json", rep);
    for (const auto& [agent, sum] : scores.per_agent) {
      out << fmt::format("  agent-{:<4} {:.1f} ± {:.2f}\n", agent, sum.pct, sum.se_binomial);
    }
    out << fmt::format("  overall    {:.1f} ± {:.2f}\n", scores.overall.pct, scores.overall.se_binomial);
    const auto cost = compare_cost(Variant::Original, params, ledger.totals(), n_done);
    write_json(dir / "cost.json", cost_json(cost, params, ledger.totals()));
    print_cost(out, cost);
  }
  out << fmt::format("  wrote {}\n", dir.string());
  return failure_exit(batch.failures, err);
}

// ---- loo ---------------------------------------------------------------

int cmd_loo(const Command& cmd, std::ostream& out, std::ostream& err) {
  Setup s = make_setup(cmd);
  std::optional<BaseRun> base;
  std::vector<Question> questions;
  std::string digest;
  if (!s.run.empty()) {
    base = load_base(s.run);
    adopt_base(s, *base);
    questions = questions_for(base->manifest);
    digest = base->manifest.dataset_digest;
  }
  check_debate_config(s);
  if (!base) questions = select_questions(s, digest);
  const auto targets = parse_exclude(s.exclude, s.debate);
  const int n = s.debate.n_agents(), t = s.debate.rounds_total;
  if (n < 3) {
    throw Error(ErrorCode::NTooSmall, fmt::format("leave-one-out needs ≥ 3 agents, config has {}", n));
  }
  const auto ids = ids_of(questions);

  if (s.dry_run) {
    const auto per_q = static_cast<std::int64_t>(expected_completions(Variant::Loo, n, t));
    out << json({{"command", "loo"}, {"questions", questions.size()}, {"n_agents", n}, {"rounds", t},
                 {"targets", targets}, {"calls_per_question_per_target", per_q},
                 {"total_calls", per_q * static_cast<std::int64_t>(questions.size() * targets.size())}})
               .dump(2)
        << "\n";
    return kExitOk;
  }

  const auto registry = make_registry(s.backends);
  const auto prompts = make_prompts(s.templates_dir);
  const DebateEnv env{registry, prompts};
  const auto judge = make_judge(s, registry, prompts);
  const fs::path root = s.out;
  int status = kExitOk;
  for (int k : targets) {
    const std::optional<std::string> base_id =
        base ? std::optional<std::string>(base->manifest.run_id) : std::nullopt;
    const std::string run_id = make_run_id(fmt::format("loo{}", k), *s.task, s.debate, digest, ids, base_id);
    const fs::path dir = prepare_run_dir(root, run_id, s.force);
    RunManifest manifest = base_manifest(s, run_id, Variant::Loo, k);
    manifest.base_run = base_id;
    manifest.dataset_path = base ? base->manifest.dataset_path : fs::absolute(s.dataset).string();
    manifest.dataset_digest = digest;
    manifest.question_ids = ids;
    write_manifest(dir, manifest);

    const auto batch = run_loo(s.debate, questions, k, env, run_id, BatchOptions{s.parallel, s.keep_going});
    save_transcripts(batch.values, dir);
    if (!batch.failures.empty()) write_json(dir / "failures.json", failures_json(batch.failures));
    out << fmt::format("loo {} (exclude agent {}, {} questions)\n", run_id, k, batch.values.size());
    if (status == kExitOk) status = failure_exit(batch.failures, err);
    if (batch.values.empty()) continue;

    ContributionReport report;
    std::set<std::string> done;
    for (const auto& tr : batch.values) done.insert(tr.question_id);
    if (base) {
      std::vector<Transcript> originals;
      for (const auto& tr : base->transcripts) {
        if (done.count(tr.question_id)) originals.push_back(tr);
      }
      report = contribution_report(*s.task, questions, originals, batch.values, Method::Loo, k,
                                   judge ? &*judge : nullptr);
    } else {
      const auto scores = score_runs(*s.task, questions, batch.values, judge ? &*judge : nullptr);
      report.task = *s.task;
      report.n_agents = n;
      report.excluded_agent = k;
      for (const auto& [agent, sum] : scores.per_agent) report.per_agent[agent].loo = sum;
      report.overall.loo = scores.overall;
    }
    write_file(dir / kResultsFile, cells_csv(report_cells(report, run_id, s.debate)));
    write_file(dir / "scores.csv", scores_csv(report, s.debate));
    write_json(dir / "report.json", report_json(report));
    print_report(out, report, Method::Loo);

    // Q and R come from the original debate when there is one.
    const auto ledger = TokenLedger::from_transcripts(batch.values);
    TokenParams params = base ? estimate_params(TokenLedger::from_transcripts(base->transcripts), TokenLedger{})
                              : estimate_params(ledger, TokenLedger{});
    params.n_agents = n;
    params.rounds = t;
    const auto cost = compare_cost(Variant::Loo, params, ledger.totals(), static_cast<std::int64_t>(done.size()));
    write_json(dir / "cost.json", cost_json(cost, params, ledger.totals()));
    print_cost(out, cost);
    out << fmt::format("  wrote {}\n", dir.string());
  }
  return status;
}

// ---- introspec ---------------------------------------------------------

int cmd_introspec(const Command& cmd, std::ostream& out, std::ostream& err) {
  Setup s = make_setup(cmd);
  const BaseRun base = load_base(s.run);
  adopt_base(s, base);
  check_debate_config(s);
  const auto targets = parse_exclude(s.exclude, s.debate);
  const int n = s.debate.n_agents();
  const auto questions = questions_for(base.manifest);

  if (s.dry_run) {
    const auto per_q = static_cast<std::int64_t>(n - 1);
    out << json({{"command", "introspec"}, {"questions", base.transcripts.size()}, {"n_agents", n},
                 {"targets", targets}, {"calls_per_question_per_target", per_q},
                 {"total_calls", per_q * static_cast<std::int64_t>(base.transcripts.size() * targets.size())}})
               .dump(2)
        << "\n";
    return kExitOk;
  }
  if (base.transcripts.empty()) throw Error(ErrorCode::EmptyInput, fmt::format("{} holds no transcripts", s.run));

  const auto registry = make_registry(s.backends);
  const auto prompts = make_prompts(s.templates_dir);
  const DebateEnv env{registry, prompts};
  const auto judge = make_judge(s, registry, prompts);
  const fs::path root = cmd.given("--out") || s.raw.contains("out") ? fs::path(s.out) : base.dir.parent_path();
  int status = kExitOk;
  for (int k : targets) {
    const std::string run_id = make_run_id(fmt::format("introspec{}", k), *s.task, s.debate,
                                           base.manifest.dataset_digest, base.manifest.question_ids,
                                           base.manifest.run_id);
    const fs::path dir = prepare_run_dir(root, run_id, s.force);
    RunManifest manifest = base_manifest(s, run_id, Variant::Introspec, k);
    manifest.base_run = base.manifest.run_id;
    manifest.dataset_path = base.manifest.dataset_path;
    manifest.dataset_digest = base.manifest.dataset_digest;
    manifest.question_ids = base.manifest.question_ids;
    manifest.sample = base.manifest.sample;
    manifest.sample_seed = base.manifest.sample_seed;
    write_manifest(dir, manifest);

    const auto batch = run_introspec_batch(s.debate, *s.task, base.transcripts, k, env, run_id,
                                           BatchOptions{s.parallel, s.keep_going});
    save_transcripts(batch.values, dir);
    if (!batch.failures.empty()) write_json(dir / "failures.json", failures_json(batch.failures));
    out << fmt::format("introspec {} (exclude agent {}, {} questions)\n", run_id, k, batch.values.size());
    if (status == kExitOk) status = failure_exit(batch.failures, err);
    if (batch.values.empty()) continue;

    std::set<std::string> done;
    for (const auto& tr : batch.values) done.insert(tr.question_id);
    std::vector<Transcript> originals;
    for (const auto& tr : base.transcripts) {
      if (done.count(tr.question_id)) originals.push_back(tr);
    }
    const auto report = contribution_report(*s.task, questions, originals, batch.values, Method::Introspec, k,
                                            judge ? &*judge : nullptr);
    write_file(dir / kResultsFile, cells_csv(report_cells(report, run_id, s.debate)));
    write_file(dir / "scores.csv", scores_csv(report, s.debate));
    write_json(dir / "report.json", report_json(report));
    print_report(out, report, Method::Introspec);

    const auto ledger = TokenLedger::from_transcripts(batch.values);
    TokenParams params = estimate_params(TokenLedger::from_transcripts(originals), ledger);
    params.n_agents = n;
    params.rounds = s.debate.rounds_total;
    const auto cost = compare_cost(Variant::Introspec, params, ledger.totals(), static_cast<std::int64_t>(done.size()));
    write_json(dir / "cost.json", cost_json(cost, params, ledger.totals()));
    print_cost(out, cost);
    out << fmt::format("  wrote {}\n", dir.string());
  }
  return status;
}

// ---- analyze -----------------------------------------------------------

std::vector<TableCell> cells_from_runs(const std::vector<std::string>& loo_runs,
                                       const std::vector<std::string>& introspec_runs, json& cost) {
  using Key = std::tuple<int, int, std::string, std::string>;  // n, excluded, scope, dataset
  std::map<Key, TableCell> loo, intro;
  auto ingest = [&](const std::string& dir, std::map<Key, TableCell>& into, const char* kind) {
    for (auto& c : load_cells(fs::path(dir) / kResultsFile)) {
      into[{c.n_agents, c.excluded, c.scope, c.dataset}] = std::move(c);
    }
    const fs::path cost_path = fs::path(dir) / "cost.json";
    if (fs::exists(cost_path)) {
      cost[kind].push_back(json::parse(read_file(cost_path)));
    }
  };
  cost = {{"loo", json::array()}, {"introspec", json::array()}};
  for (const auto& d : loo_runs) ingest(d, loo, "loo");
  for (const auto& d : introspec_runs) ingest(d, intro, "introspec");
  std::vector<TableCell> out;
  for (auto& [key, c] : loo) {
    auto it = intro.find(key);
    if (it == intro.end()) continue;
    c.introspec = it->second.introspec;
    if (std::isnan(c.original)) c.original = it->second.original;
    out.push_back(std::move(c));
  }
  return out;
}

json stats_json(const AgreementStats& s) {
  return {{"n_pairs", s.n_pairs},   {"mean_diff", s.mean_diff}, {"sd_diff", s.sd_diff},
          {"loa_low", s.loa_low},   {"loa_high", s.loa_high},   {"within_loa_fraction", s.within_loa_fraction}};
}

int cmd_analyze(const Command& cmd, std::ostream& out, std::ostream&) {
  const Flags& f = cmd.flags();
  json cost = json::object();
  std::vector<TableCell> cells;
  if (!f.cells.empty()) {
    for (const auto& path : f.cells) {
      auto more = load_cells(path);
      cells.insert(cells.end(), more.begin(), more.end());
    }
  } else if (!f.loo_runs.empty() && !f.introspec_runs.empty()) {
    cells = cells_from_runs(f.loo_runs, f.introspec_runs, cost);
  } else {
    throw Error(ErrorCode::InvalidConfig, "analyze needs --cells, or --loo-run with --introspec-run");
  }
  std::erase_if(cells, [](const TableCell& c) {
    return std::isnan(c.original) || std::isnan(c.loo) || std::isnan(c.introspec);
  });
  if (cells.empty()) throw Error(ErrorCode::EmptyInput, "no cells with original, loo and introspec scores");

  const fs::path dir = f.out.empty() ? fs::path("analysis") : fs::path(f.out);
  if (fs::exists(dir / "agreement.json") && !f.force) {
    throw Error(ErrorCode::RunExists, fmt::format("{} already holds an analysis; pass --force", dir.string()));
  }

  // Bland-Altman over all cells and per table.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) groups[cells[i].table].push_back(i);
  const auto all_pairs = contribution_pairs(cells);
  const auto overall = bland_altman(all_pairs);

  json agreement;
  agreement["overall"] = stats_json(overall.stats);
  auto& by_table = agreement["by_table"] = json::object();
  std::string points = csv_row(std::vector<std::string>{"table", "dataset", "n_agents", "composition", "excluded",
                                                        "scope", "average", "difference", "within_loa"});
  for (const auto& [table, idx] : groups) {
    std::vector<TableCell> subset;
    for (auto i : idx) subset.push_back(cells[i]);
    if (subset.size() < 2) continue;
    const auto pairs = contribution_pairs(subset);
    const auto ba = bland_altman(pairs);
    by_table[table.empty() ? "-" : table] = stats_json(ba.stats);
    for (std::size_t i = 0; i < subset.size(); ++i) {
      const auto& c = subset[i];
      const auto& p = ba.points[i];
      points += csv_row(std::vector<std::string>{c.table, c.dataset, std::to_string(c.n_agents), c.composition,
                                                 std::to_string(c.excluded), c.scope, fmt::format("{}", p.average),
                                                 fmt::format("{}", p.difference), p.within_loa ? "1" : "0"});
    }
  }

  std::vector<TrendInput> inputs;
  for (const auto& c : cells) inputs.push_back({c.original, c.loo, c.introspec});
  const auto trend = trend_match(inputs);
  std::string trend_csv = csv_row(std::vector<std::string>{"table", "dataset", "n_agents", "composition",
                                                           "excluded", "scope", "original", "loo", "introspec",
                                                           "match", "color", "published_color"});
  std::size_t colored = 0, agree = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const auto color = highlight_color(trend.cells[i].match);
    if (c.published_color) {
      ++colored;
      agree += *c.published_color == color ? 1 : 0;
    }
    trend_csv += csv_row(std::vector<std::string>{
        c.table, c.dataset, std::to_string(c.n_agents), c.composition, std::to_string(c.excluded), c.scope,
        fmt::format("{}", c.original), fmt::format("{}", c.loo), fmt::format("{}", c.introspec),
        std::string(to_string(trend.cells[i].match)), std::string(color), c.published_color.value_or("")});
  }
  json tj = {{"cells", cells.size()}, {"match", trend.matches}, {"nomatch", trend.mismatches}, {"flat", trend.flats}};
  tj["match_rate"] = trend.match_rate ? json(*trend.match_rate) : json(nullptr);
  if (colored > 0) {
    tj["published_colored_cells"] = colored;
    tj["published_color_agreement"] = static_cast<double>(agree) / static_cast<double>(colored);
  }
  agreement["trend"] = tj;
  if (!cost.empty()) agreement["cost"] = cost;

  fs::create_directories(dir);
  write_json(dir / "agreement.json", agreement);
  write_file(dir / "bland_altman_points.csv", points);
  write_file(dir / "trend_match.csv", trend_csv);

  const auto& st = overall.stats;
  out << fmt::format("cells {}: match {} nomatch {} flat {}", cells.size(), trend.matches, trend.mismatches,
                     trend.flats);
  if (trend.match_rate) out << fmt::format(" (match rate {:.3f})", *trend.match_rate);
  out << "\n";
  if (colored > 0) out << fmt::format("published highlight agreement: {}/{}\n", agree, colored);
  out << fmt::format("bland-altman: mean {:.4f} sd {:.4f} LoA [{:.4f}, {:.4f}] within {:.3f}\n", st.mean_diff,
                     st.sd_diff, st.loa_low, st.loa_high, st.within_loa_fraction);
  out << fmt::format("  wrote {}\n", dir.string());
  return kExitOk;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config (backends, agents, judge, defaults)");
  sub->add_option("--out", f.out, "Output root directory");
  sub->add_option("--parallel", f.parallel, "Questions debated concurrently");
  sub->add_flag("--dry-run", f.dry_run, "Print planned call counts and exit");
  sub->add_flag("--keep-going", f.keep_going, "Continue past failing questions");
  sub->add_flag("--force", f.force, "Overwrite an existing run directory");
}

void add_dataset(CLI::App* sub, Flags& f) {
  sub->add_option("--task", f.task, "gsm | mmlu | biography");
  sub->add_option("--dataset", f.dataset, "Dataset file");
  sub->add_option("--rounds", f.rounds, "Rounds T (1 independent + T-1 debate)");
  sub->add_option("--sample", f.sample, "Random subset size");
  sub->add_option("--seed", f.seed, "Sampling and backend seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-agent debate with leave-one-out and introspective contribution estimates"};
  app.require_subcommand(1);
  Flags f;

  auto* run_cmd = app.add_subcommand("run", "Run original debates over a dataset");
  add_common(run_cmd, f);
  add_dataset(run_cmd, f);

  auto* loo_cmd = app.add_subcommand("loo", "Re-debate without one agent");
  add_common(loo_cmd, f);
  add_dataset(loo_cmd, f);
  loo_cmd->add_option("--exclude", f.exclude, "Agent index or 'all'");
  loo_cmd->add_option("--run", f.run, "Original run directory to compare against");

  auto* intro_cmd = app.add_subcommand("introspec", "Append an introspection round to an original run");
  add_common(intro_cmd, f);
  intro_cmd->add_option("--exclude", f.exclude, "Agent index or 'all'");
  intro_cmd->add_option("--run", f.run, "Original run directory");

  auto* analyze_cmd = app.add_subcommand("analyze", "Trend match and Bland-Altman agreement");
  analyze_cmd->add_option("--cells", f.cells, "Table-cell CSV(s)");
  analyze_cmd->add_option("--loo-run", f.loo_runs, "LOO run directories");
  analyze_cmd->add_option("--introspec-run", f.introspec_runs, "Introspec run directories");
  analyze_cmd->add_option("--out", f.out, "Output directory");
  analyze_cmd->add_flag("--force", f.force, "Overwrite an existing analysis");

  std::vector<std::string> argv_rest(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(argv_rest.begin(), argv_rest.end());
  try {
    app.parse(argv_rest);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(Command(run_cmd, f), out, err);
    if (loo_cmd->parsed()) return cmd_loo(Command(loo_cmd, f), out, err);
    if (intro_cmd->parsed()) return cmd_introspec(Command(intro_cmd, f), out, err);
    return cmd_analyze(Command(analyze_cmd, f), out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace dloo::cli

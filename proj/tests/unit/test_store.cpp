#include <doctest.h>

#include <cstdlib>
#include <random>
#include <sstream>

#include "dloo/cli.hpp"
#include "dloo/store.hpp"
#include "tmpdir.hpp"

using namespace dloo;
using testing::TempDir;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

Transcript random_transcript(std::mt19937& rng, const std::string& qid) {
  std::uniform_int_distribution<int> len(0, 40), ch(0, 127), small(1, 4), tok(0, 5000);
  Transcript t;
  t.run_id = "orig-gsm-abc";
  t.question_id = qid;
  t.config_digest = "0123456789abcdef";
  t.variant = static_cast<Variant>(small(rng) % 3);
  if (t.variant != Variant::Original) t.excluded_agent = small(rng);
  const int msgs = small(rng) * 2;
  for (int i = 0; i < msgs; ++i) {
    std::string content(static_cast<std::size_t>(len(rng)), ' ');
    for (auto& c : content) c = static_cast<char>(ch(rng));
    content += "\xC3\xA9 \\boxed{1}\n\"q\"";
    t.messages.push_back({1 + i / 2, small(rng), i % 2 ? Role::Completion : Role::Prompt, content, tok(rng),
                          i % 2 ? tok(rng) : 0});
  }
  return t;
}

}  // namespace

TEST_CASE("CSV parsing handles quotes and line numbers") {
  const auto r = parse_csv("a,\"b,c\",\"d\"\"e\"\r\n1,2,3\n\"multi\nline\",x,y\n");
  REQUIRE(r.size() == 3);
  CHECK(r[0].fields == std::vector<std::string>{"a", "b,c", "d\"e"});
  CHECK(r[1].line == 2);
  CHECK(r[2].fields[0] == "multi\nline");
  CHECK(r[2].line == 3);
  const std::vector<std::string> f{"plain", "with,comma", "q\"uote"};
  CHECK(parse_csv(csv_row(f)).at(0).fields == f);
}

TEST_CASE("GSM loader takes the gold after ####") {
  TempDir d("gsm");
  write_file(d / "g.jsonl",
             "{\"question\": \"What is 6*7?\", \"answer\": \"6*7=42\\n#### 42\"}\n"
             "\n"
             "{\"question\": \"Cost?\", \"answer\": \"#### 1 #### $1,250.50\", \"id\": \"custom\"}\n");
  const auto qs = load_dataset(d / "g.jsonl", TaskKind::GradeSchoolMath);
  REQUIRE(qs.size() == 2);
  CHECK(qs[0].id == "gsm-0001");
  CHECK(std::get<Decimal>(qs[0].gold).str() == "42");
  CHECK(qs[1].id == "custom");
  CHECK(std::get<Decimal>(qs[1].gold).str() == "1250.5");

  write_file(d / "bad.jsonl", "{\"question\": \"x\", \"answer\": \"no marker\"}\n");
  CHECK(code_of([&] { load_dataset(d / "bad.jsonl", TaskKind::GradeSchoolMath); }) == ErrorCode::GoldMissing);
  CHECK(code_of([&] { load_dataset(d / "missing.jsonl", TaskKind::GradeSchoolMath); }) == ErrorCode::IoError);
}

TEST_CASE("MMLU loader needs four options and reports the line") {
  TempDir d("mmlu");
  write_file(d / "ok.csv", "question,A,B,C,D,answer\nWhich is prime?,4,6,7,9,C\n\"Pick, one\",a,b,c,d,a\n");
  const auto qs = load_dataset(d / "ok.csv", TaskKind::MultipleChoice);
  REQUIRE(qs.size() == 2);
  CHECK(qs[0].choices == std::vector<std::string>{"4", "6", "7", "9"});
  CHECK(std::get<Letter>(qs[0].gold).value == 'C');
  CHECK(qs[1].body == "Pick, one");
  CHECK(std::get<Letter>(qs[1].gold).value == 'A');

  write_file(d / "bad.csv", "Q1,a,b,c,d,A\nQ2,a,b,c,B\n");
  try {
    load_dataset(d / "bad.csv", TaskKind::MultipleChoice);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("Biography loader accepts a map or JSONL") {
  TempDir d("bio");
  write_file(d / "b.json", R"({"Alan Turing": ["Born 1912", "Logician"], "Ada Lovelace": "- First program\n- Notes"})");
  const auto qs = load_dataset(d / "b.json", TaskKind::Biography);
  REQUIRE(qs.size() == 2);
  for (const auto& q : qs) CHECK(question_violations(q).empty());
  write_file(d / "b.jsonl", "{\"name\": \"Grace Hopper\", \"bullets\": [\"COBOL\"]}\n");
  CHECK(load_dataset(d / "b.jsonl", TaskKind::Biography).at(0).body == "Grace Hopper");
}

TEST_CASE("shipped sample datasets load") {
  CHECK(load_dataset(DLOO_SOURCE_DIR "/data/gsm_sample.jsonl", TaskKind::GradeSchoolMath).size() == 4);
  CHECK(load_dataset(DLOO_SOURCE_DIR "/data/mmlu_sample.csv", TaskKind::MultipleChoice).size() == 3);
  CHECK(load_dataset(DLOO_SOURCE_DIR "/data/biography_sample.json", TaskKind::Biography).size() == 2);
}

TEST_CASE("sampling is seeded and prefix-stable") {
  std::vector<Question> all;
  for (int i = 0; i < 50; ++i) {
    Question q;
    q.id = "q" + std::to_string(i);
    q.gold = *Decimal::parse("1");
    all.push_back(q);
  }
  const auto a = sample_questions(all, 10, 7), b = sample_questions(all, 10, 7);
  CHECK(a == b);
  const auto c = sample_questions(all, 20, 7);
  CHECK(std::equal(a.begin(), a.end(), c.begin()));
  CHECK(sample_questions(all, 10, 8) != a);
  CHECK(sample_questions(all, 500, 7).size() == 50);
}

TEST_CASE("transcripts round-trip through JSONL") {
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto t = random_transcript(rng, "q" + std::to_string(i));
    const auto back = parse_transcripts(transcript_jsonl(t));
    REQUIRE(back.size() == 1);
    CHECK(back[0] == t);
  }
  Transcript empty;
  empty.run_id = "r";
  empty.question_id = "q";
  const auto back = parse_transcripts(transcript_jsonl(empty));
  REQUIRE(back.size() == 1);
  CHECK(back[0] == empty);
}

TEST_CASE("transcript schema version is enforced") {
  Transcript t;
  t.run_id = "r";
  t.question_id = "q";
  t.messages = {{1, 1, Role::Prompt, "hi", 1, 0}};
  auto line = transcript_jsonl(t);
  const auto pos = line.find("\"schema_version\":1");
  REQUIRE(pos != std::string::npos);
  line.replace(pos, 18, "\"schema_version\":2");
  CHECK(code_of([&] { parse_transcripts(line); }) == ErrorCode::SchemaVersionMismatch);
  CHECK(code_of([&] { parse_transcripts("{not json"); }) == ErrorCode::ParseError);
}

TEST_CASE("saving twice leaves identical bytes") {
  TempDir d("save");
  std::mt19937 rng(4);
  std::vector<Transcript> ts;
  for (int i = 0; i < 5; ++i) ts.push_back(random_transcript(rng, "q" + std::to_string(i)));
  save_transcripts(ts, d.path());
  const auto first = read_file(d / std::string(kTranscriptsFile));
  save_transcripts(ts, d.path());
  save_transcript(ts[2], d.path());
  CHECK(read_file(d / std::string(kTranscriptsFile)) == first);
  CHECK(load_transcripts(d.path()) == ts);
  CHECK(load_transcript(d.path(), ts[3].run_id, "q3") == ts[3]);
  CHECK(code_of([&] { load_transcript(d.path(), "nope", "q3"); }) == ErrorCode::IoError);

  auto changed = ts[1];
  changed.messages.push_back({9, 1, Role::Prompt, "extra", 1, 0});
  save_transcript(changed, d.path());
  const auto loaded = load_transcripts(d.path());
  REQUIRE(loaded.size() == 5);
  CHECK(loaded[1] == changed);
}

TEST_CASE("manifest round trip and run directory guard") {
  TempDir d("manifest");
  RunManifest m;
  m.run_id = "loo3-gsm-0123456789";
  m.created_at = utc_timestamp();
  m.task = TaskKind::GradeSchoolMath;
  m.variant = Variant::Loo;
  m.excluded_agent = 3;
  m.base_run = "orig-gsm-x";
  m.config = make_config(3, 3, "mock", 5);
  m.config.agents[2].tier = Tier::UnderPerforming;
  m.config.agents[1].name = "David";
  BackendConfig b;
  b.id = "gpt";
  b.kind = BackendKind::OpenAiCompatible;
  b.base_url = "http://localhost:1";
  b.model = "m";
  b.api_key_env = "SOME_KEY";
  m.backends["gpt"] = b;
  m.dataset_path = "/data/x.jsonl";
  m.dataset_digest = "abc";
  m.sample = 10;
  m.sample_seed = 9;
  m.question_ids = {"a", "b"};
  const auto back = manifest_from_json(to_json(m));
  CHECK(to_json(back) == to_json(m));
  CHECK(back.config == m.config);
  CHECK(back.excluded_agent == 3);

  const auto dir = prepare_run_dir(d.path(), m.run_id, false);
  write_manifest(dir, m);
  CHECK(to_json(read_manifest(dir)) == to_json(m));
  CHECK(code_of([&] { prepare_run_dir(d.path(), m.run_id, false); }) == ErrorCode::RunExists);
  prepare_run_dir(d.path(), m.run_id, true);
  CHECK_FALSE(std::filesystem::exists(dir / std::string(kManifestFile)));
  CHECK(code_of([&] { read_manifest(dir); }) == ErrorCode::MissingOriginalRun);
}

TEST_CASE("table cells CSV round trip") {
  const std::vector<TableCell> cells{
      {"I", "gsm", 3, "", 1, "agent-2", 78.8, 75.7, 81.1, "white"},
      {"III", "mmlu", 4, "1:3", 2, "overall", 55.0, 56.25, 54.5, std::nullopt}};
  const auto back = parse_cells(cells_csv(cells));
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].table == cells[i].table);
    CHECK(back[i].composition == cells[i].composition);
    CHECK(back[i].original == cells[i].original);
    CHECK(back[i].loo == cells[i].loo);
    CHECK(back[i].introspec == cells[i].introspec);
    CHECK(back[i].published_color == cells[i].published_color);
  }
  CHECK(load_cells(DLOO_SOURCE_DIR "/fixtures/published_tables.csv").size() == 168);
}

TEST_CASE("no API key value reaches any artifact") {
  TempDir d("secret");
  const std::string secret = "sk-test-SECRET-VALUE-0123456789";
  ::setenv("DLOO_TEST_SECRET_KEY", secret.c_str(), 1);
  write_file(d / "cfg.json", R"({
    "task": "gsm",
    "dataset": ")" + std::string(DLOO_SOURCE_DIR) + R"(/data/gsm_sample.jsonl",
    "rounds": 2,
    "backends": {"gpt": {"kind": "openai", "base_url": "http://127.0.0.1:1/v1", "model": "m",
                          "api_key_env": "DLOO_TEST_SECRET_KEY",
                          "retry": {"max_attempts": 1, "base_backoff_ms": 0}, "timeout_ms": 500}},
    "agents": [{"backend": "gpt"}, {"backend": "gpt"}]
  })");
  std::ostringstream out, err;
  const int code = cli::run({"debate_loo", "run", "--config", (d / "cfg.json").string(), "--out",
                             (d / "runs").string(), "--keep-going"},
                            out, err);
  ::unsetenv("DLOO_TEST_SECRET_KEY");
  CHECK(code == cli::kExitBackend);
  CHECK(out.str().find(secret) == std::string::npos);
  CHECK(err.str().find(secret) == std::string::npos);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(d / "runs")) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(read_file(e.path()).find(secret) == std::string::npos);
  }
  CHECK(files >= 1);
  bool saw_env_name = false;
  for (const auto& e : std::filesystem::recursive_directory_iterator(d / "runs")) {
    if (e.path().filename() == "manifest.json") {
      saw_env_name = read_file(e.path()).find("DLOO_TEST_SECRET_KEY") != std::string::npos;
    }
  }
  CHECK(saw_env_name);
}

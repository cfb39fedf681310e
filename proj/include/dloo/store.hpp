#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dloo/analysis.hpp"
#include "dloo/backend.hpp"
#include "dloo/core.hpp"

namespace dloo {

namespace fs = std::filesystem;

// RFC 4180-style CSV: quoted fields, doubled quotes, CRLF or LF.
struct CsvRecord {
  std::size_t line = 0;  // 1-based line the record starts on
  std::vector<std::string> fields;
};

std::vector<CsvRecord> parse_csv(std::string_view text);
std::string csv_row(std::span<const std::string> fields);

std::string read_file(const fs::path& path);
// Writes via a temporary file and rename.
void write_file(const fs::path& path, std::string_view bytes);

// GSM: JSONL {question, answer[, id]} with gold after the final "####".
// MultipleChoice: CSV rows question,A,B,C,D,letter (an optional header row
// starting with "question" is skipped).
// Biography: a JSON object {name: [facts] | "text"} or JSONL {name, bullets}.
std::vector<Question> load_dataset(const fs::path& path, TaskKind task);

// Seeded shuffle, then the first k. Growing k extends the subset.
std::vector<Question> sample_questions(std::vector<Question> questions, std::size_t k,
                                       std::uint64_t seed);

std::string dataset_digest(const fs::path& path);

inline constexpr int kSchemaVersion = 1;

// One JSON line per message, keys sorted, trailing newline.
std::string transcript_jsonl(const Transcript& t);
std::vector<Transcript> parse_transcripts(std::string_view jsonl);

inline constexpr std::string_view kTranscriptsFile = "transcripts.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kResultsFile = "results.csv";

// Replaces any stored transcript with the same (run_id, question_id) in
// place, appending otherwise; repeated saves leave identical bytes.
void save_transcript(const Transcript& t, const fs::path& dir);
void save_transcripts(std::span<const Transcript> ts, const fs::path& dir);
Transcript load_transcript(const fs::path& dir, const std::string& run_id,
                           const std::string& question_id);
std::vector<Transcript> load_transcripts(const fs::path& dir);

nlohmann::json to_json(const DebateConfig& config);
DebateConfig debate_config_from_json(const nlohmann::json& j);

struct RunManifest {
  std::string run_id;
  std::string created_at;  // UTC, ISO-8601
  TaskKind task = TaskKind::GradeSchoolMath;
  Variant variant = Variant::Original;
  std::optional<int> excluded_agent;
  std::optional<std::string> base_run;  // the Original run a loo/introspec run derives from
  DebateConfig config;
  std::map<std::string, BackendConfig> backends;  // env-var names only, never key values
  std::optional<std::string> judge_backend;
  std::string dataset_path;
  std::string dataset_digest;
  std::optional<std::size_t> sample;
  std::uint64_t sample_seed = 0;
  std::vector<std::string> question_ids;
  std::string templates_dir;  // empty for the built-in templates
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// Creates `root/run_id`; throws RunExists if a manifest is already there and
// `force` is false, otherwise clears the previous contents.
fs::path prepare_run_dir(const fs::path& root, const std::string& run_id, bool force);
void write_manifest(const fs::path& dir, const RunManifest& m);
RunManifest read_manifest(const fs::path& dir);

std::string utc_timestamp();

// Table-cell CSV, header:
// table,dataset,n_agents,composition,excluded,scope,original,loo,introspec,published_color
std::vector<TableCell> load_cells(const fs::path& path);
std::vector<TableCell> parse_cells(std::string_view csv, const std::string& source = "<cells>");
std::string cells_csv(std::span<const TableCell> cells);

}  // namespace dloo

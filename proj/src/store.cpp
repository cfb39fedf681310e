#include "dloo/store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

namespace dloo {

using nlohmann::json;

std::vector<CsvRecord> parse_csv(std::string_view text) {
  std::vector<CsvRecord> out;
  CsvRecord rec;
  std::string field;
  std::size_t line = 1;
  bool in_quotes = false, started = false;
  rec.line = 1;
  auto end_field = [&] {
    rec.fields.push_back(std::move(field));
    field.clear();
  };
  auto end_record = [&] {
    end_field();
    out.push_back(std::move(rec));
    rec = CsvRecord{};
    started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (!started) {
      rec.line = line;
      started = true;
    }
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"': in_quotes = true; break;
      case ',': end_field(); break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        end_record();
        ++line;
        break;
      default: field += c;
    }
  }
  if (in_quotes) throw Error(ErrorCode::ParseError, fmt::format("line {}: unterminated quote", rec.line));
  if (started) end_record();
  // blank lines produce a single empty field
  std::erase_if(out, [](const CsvRecord& r) { return r.fields.size() == 1 && r.fields[0].empty(); });
  return out;
}

std::string csv_row(std::span<const std::string> fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    const auto& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out += f;
      continue;
    }
    out += '"';
    for (char c : f) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
  }
  out += '\n';
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, fmt::format("cannot write {}", path.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, fmt::format("short write to {}", path.string()));
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, fmt::format("cannot replace {}: {}", path.string(), ec.message()));
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    out.emplace_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

json parse_json_line(const std::string& line, const fs::path& path, std::size_t n) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, fmt::format("{}:{}: {}", path.string(), n, e.what()));
  }
}

std::string string_field(const json& j, const char* key, const fs::path& path, std::size_t n) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw Error(ErrorCode::ParseError,
                fmt::format("{}:{}: missing string field \"{}\"", path.string(), n, key));
  }
  return it->get<std::string>();
}

std::vector<Question> load_gsm(const std::string& text, const fs::path& path) {
  std::vector<Question> out;
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t n = i + 1;
    if (trim(lines[i]).empty()) continue;
    const json j = parse_json_line(lines[i], path, n);
    Question q;
    q.task = TaskKind::GradeSchoolMath;
    q.body = string_field(j, "question", path, n);
    const std::string answer = string_field(j, "answer", path, n);
    const auto mark = answer.rfind("####");
    if (mark == std::string::npos) {
      throw Error(ErrorCode::GoldMissing, fmt::format("{}:{}: answer has no #### marker", path.string(), n));
    }
    auto gold = Decimal::parse(trim(std::string_view(answer).substr(mark + 4)));
    if (!gold) {
      throw Error(ErrorCode::GoldMissing,
                  fmt::format("{}:{}: no number after ####", path.string(), n));
    }
    q.gold = *gold;
    q.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>()
                                                   : fmt::format("gsm-{:04}", out.size() + 1);
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<Question> load_mmlu(const std::string& text, const fs::path& path) {
  std::vector<Question> out;
  auto records = parse_csv(text);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i == 0 && !r.fields.empty()) {
      std::string head = trim(r.fields[0]);
      std::transform(head.begin(), head.end(), head.begin(), ::tolower);
      if (head == "question") continue;
    }
    if (r.fields.size() != 6) {
      throw Error(ErrorCode::ParseError,
                  fmt::format("{}:{}: expected question,A,B,C,D,answer (6 fields), got {}",
                              path.string(), r.line, r.fields.size()));
    }
    const std::string letter = trim(r.fields[5]);
    if (letter.empty()) {
      throw Error(ErrorCode::GoldMissing, fmt::format("{}:{}: empty answer", path.string(), r.line));
    }
    if (letter.size() != 1 || std::string_view("ABCDabcd").find(letter[0]) == std::string_view::npos) {
      throw Error(ErrorCode::ParseError,
                  fmt::format("{}:{}: answer \"{}\" is not A-D", path.string(), r.line, letter));
    }
    Question q;
    q.task = TaskKind::MultipleChoice;
    q.id = fmt::format("mmlu-{:04}", out.size() + 1);
    q.body = r.fields[0];
    q.choices.assign(r.fields.begin() + 1, r.fields.begin() + 5);
    q.gold = Letter{static_cast<char>(::toupper(letter[0]))};
    out.push_back(std::move(q));
  }
  return out;
}

Bullets bullets_from(const json& j, const fs::path& path, std::size_t n) {
  Bullets b;
  if (j.is_array()) {
    for (const auto& item : j) {
      if (!item.is_string()) {
        throw Error(ErrorCode::ParseError, fmt::format("{}:{}: bullets must be strings", path.string(), n));
      }
      if (auto s = trim(item.get<std::string>()); !s.empty()) b.items.push_back(std::move(s));
    }
  } else if (j.is_string()) {
    // free text: one fact per non-empty line
    for (auto& line : split_lines(j.get<std::string>())) {
      if (auto s = trim(line); !s.empty()) b.items.push_back(std::move(s));
    }
  } else {
    throw Error(ErrorCode::ParseError, fmt::format("{}:{}: bad gold facts", path.string(), n));
  }
  if (b.items.empty()) {
    throw Error(ErrorCode::GoldMissing, fmt::format("{}:{}: no gold facts", path.string(), n));
  }
  return b;
}

std::vector<Question> load_biography(const std::string& text, const fs::path& path) {
  std::vector<Question> out;
  auto add = [&](std::string name, Bullets gold) {
    Question q;
    q.task = TaskKind::Biography;
    q.id = fmt::format("bio-{:04}", out.size() + 1);
    q.body = std::move(name);
    q.gold = std::move(gold);
    out.push_back(std::move(q));
  };
  const auto whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded() && whole.is_object() && !whole.contains("name")) {
    for (const auto& [name, facts] : whole.items()) add(name, bullets_from(facts, path, 1));
    return out;
  }
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const json j = parse_json_line(lines[i], path, i + 1);
    auto it = j.find("bullets");
    if (it == j.end()) throw Error(ErrorCode::GoldMissing, fmt::format("{}:{}: no bullets", path.string(), i + 1));
    add(string_field(j, "name", path, i + 1), bullets_from(*it, path, i + 1));
  }
  return out;
}

}  // namespace

std::vector<Question> load_dataset(const fs::path& path, TaskKind task) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::IoError, fmt::format("dataset not found: {}", path.string()));
  }
  const std::string text = read_file(path);
  std::vector<Question> out;
  switch (task) {
    case TaskKind::GradeSchoolMath: out = load_gsm(text, path); break;
    case TaskKind::MultipleChoice: out = load_mmlu(text, path); break;
    case TaskKind::Biography: out = load_biography(text, path); break;
  }
  if (out.empty()) throw Error(ErrorCode::EmptyInput, fmt::format("{}: no questions", path.string()));
  return out;
}

std::vector<Question> sample_questions(std::vector<Question> questions, std::size_t k,
                                       std::uint64_t seed) {
  // Hand-rolled Fisher-Yates: std::shuffle's draw sequence is not portable.
  std::mt19937_64 rng(seed);
  for (std::size_t i = questions.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % bound;
    std::uint64_t x;
    do x = rng(); while (x >= limit);
    std::swap(questions[i - 1], questions[x % bound]);
  }
  if (k < questions.size()) questions.resize(k);
  return questions;
}

std::string dataset_digest(const fs::path& path) { return fnv1a_hex(read_file(path)); }

namespace {

json record_base(const Transcript& t) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["run_id"] = t.run_id;
  j["question_id"] = t.question_id;
  j["config_digest"] = t.config_digest;
  j["variant"] = std::string(to_string(t.variant));
  j["excluded_agent"] = t.excluded_agent ? json(*t.excluded_agent) : json(nullptr);
  return j;
}

std::string dump(const json& j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

}  // namespace

std::string transcript_jsonl(const Transcript& t) {
  std::string out;
  if (t.messages.empty()) {
    // placeholder so an empty transcript still round-trips
    json j = record_base(t);
    j["role"] = nullptr;
    return dump(j) + '\n';
  }
  for (const auto& m : t.messages) {
    json j = record_base(t);
    j["round"] = m.round;
    j["agent_index"] = m.agent_index;
    j["role"] = std::string(to_string(m.role));
    j["content"] = m.content;
    j["prompt_tokens"] = m.prompt_tokens;
    j["completion_tokens"] = m.completion_tokens;
    out += dump(j);
    out += '\n';
  }
  return out;
}

std::vector<Transcript> parse_transcripts(std::string_view jsonl) {
  std::vector<Transcript> out;
  std::map<std::pair<std::string, std::string>, std::size_t> slot;
  const auto lines = split_lines(jsonl);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t n = i + 1;
    if (trim(lines[i]).empty()) continue;
    json j;
    try {
      j = json::parse(lines[i]);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, fmt::format("transcripts line {}: {}", n, e.what()));
    }
    try {
      const int version = j.at("schema_version").get<int>();
      if (version != kSchemaVersion) {
        throw Error(ErrorCode::SchemaVersionMismatch,
                    fmt::format("transcripts line {}: schema_version {} (expected {})", n, version,
                                kSchemaVersion));
      }
      const auto key = std::make_pair(j.at("run_id").get<std::string>(),
                                      j.at("question_id").get<std::string>());
      auto [it, fresh] = slot.try_emplace(key, out.size());
      if (fresh) {
        Transcript t;
        t.run_id = key.first;
        t.question_id = key.second;
        t.config_digest = j.at("config_digest").get<std::string>();
        const auto variant = parse_variant(j.at("variant").get<std::string>());
        if (!variant) throw Error(ErrorCode::ParseError, fmt::format("transcripts line {}: bad variant", n));
        t.variant = *variant;
        if (!j.at("excluded_agent").is_null()) t.excluded_agent = j["excluded_agent"].get<int>();
        out.push_back(std::move(t));
      }
      if (j.at("role").is_null()) continue;
      const auto role = parse_role(j["role"].get<std::string>());
      if (!role) throw Error(ErrorCode::ParseError, fmt::format("transcripts line {}: bad role", n));
      out[it->second].messages.push_back(Message{
          j.at("round").get<int>(), j.at("agent_index").get<int>(), *role,
          j.at("content").get<std::string>(), j.at("prompt_tokens").get<std::int64_t>(),
          j.at("completion_tokens").get<std::int64_t>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, fmt::format("transcripts line {}: {}", n, e.what()));
    }
  }
  return out;
}

void save_transcripts(std::span<const Transcript> ts, const fs::path& dir) {
  std::string bytes;
  for (const auto& t : ts) bytes += transcript_jsonl(t);
  write_file(dir / kTranscriptsFile, bytes);
}

void save_transcript(const Transcript& t, const fs::path& dir) {
  std::vector<Transcript> all;
  if (fs::exists(dir / kTranscriptsFile)) all = load_transcripts(dir);
  auto it = std::find_if(all.begin(), all.end(), [&](const Transcript& x) {
    return x.run_id == t.run_id && x.question_id == t.question_id;
  });
  if (it == all.end()) {
    all.push_back(t);
  } else {
    *it = t;
  }
  save_transcripts(all, dir);
}

std::vector<Transcript> load_transcripts(const fs::path& dir) {
  return parse_transcripts(read_file(dir / kTranscriptsFile));
}

Transcript load_transcript(const fs::path& dir, const std::string& run_id,
                           const std::string& question_id) {
  for (auto& t : load_transcripts(dir)) {
    if (t.run_id == run_id && t.question_id == question_id) return std::move(t);
  }
  throw Error(ErrorCode::IoError, fmt::format("{}: no transcript for run {} question {}",
                                              dir.string(), run_id, question_id));
}

json to_json(const DebateConfig& config) {
  json j;
  j["rounds"] = config.rounds_total;
  j["temperature"] = config.temperature;
  j["prompt_token_limit"] = config.prompt_token_limit;
  j["seed"] = config.seed;
  auto& agents = j["agents"] = json::array();
  for (const auto& a : config.agents) {
    agents.push_back({{"index", a.index},
                      {"name", a.name},
                      {"backend", a.backend_ref},
                      {"tier", std::string(to_string(a.tier))}});
  }
  return j;
}

DebateConfig debate_config_from_json(const json& j) {
  try {
    DebateConfig c;
    c.rounds_total = j.value("rounds", c.rounds_total);
    c.temperature = j.value("temperature", c.temperature);
    c.prompt_token_limit = j.value("prompt_token_limit", c.prompt_token_limit);
    c.seed = j.value("seed", c.seed);
    int next = 1;
    for (const auto& a : j.at("agents")) {
      AgentSpec spec;
      spec.index = a.value("index", next);
      next = spec.index + 1;
      spec.name = a.value("name", default_agent_name(spec.index));
      spec.backend_ref = a.at("backend").get<std::string>();
      const std::string tier = a.value("tier", std::string("high"));
      if (tier == "high") {
        spec.tier = Tier::HighPerforming;
      } else if (tier == "under") {
        spec.tier = Tier::UnderPerforming;
      } else {
        throw Error(ErrorCode::InvalidConfig, fmt::format("agent {}: tier must be high|under", spec.index));
      }
      c.agents.push_back(std::move(spec));
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, fmt::format("debate config: {}", e.what()));
  }
}

json to_json(const RunManifest& m) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["run_id"] = m.run_id;
  j["created_at"] = m.created_at;
  j["task"] = std::string(to_string(m.task));
  j["variant"] = std::string(to_string(m.variant));
  j["excluded_agent"] = m.excluded_agent ? json(*m.excluded_agent) : json(nullptr);
  j["base_run"] = m.base_run ? json(*m.base_run) : json(nullptr);
  j["config"] = to_json(m.config);
  auto& backends = j["backends"] = json::object();
  for (const auto& [id, b] : m.backends) backends[id] = to_json(b);
  j["judge_backend"] = m.judge_backend ? json(*m.judge_backend) : json(nullptr);
  j["dataset"] = {{"path", m.dataset_path}, {"digest", m.dataset_digest}};
  j["sample"] = m.sample ? json(*m.sample) : json(nullptr);
  j["sample_seed"] = m.sample_seed;
  j["question_ids"] = m.question_ids;
  j["templates_dir"] = m.templates_dir;
  return j;
}

RunManifest manifest_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw Error(ErrorCode::SchemaVersionMismatch,
                  fmt::format("manifest schema_version {}", j["schema_version"].dump()));
    }
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    const auto task = parse_task(j.at("task").get<std::string>());
    const auto variant = parse_variant(j.at("variant").get<std::string>());
    if (!task || !variant) throw Error(ErrorCode::ParseError, "manifest: bad task or variant");
    m.task = *task;
    m.variant = *variant;
    if (!j.at("excluded_agent").is_null()) m.excluded_agent = j["excluded_agent"].get<int>();
    if (!j.at("base_run").is_null()) m.base_run = j["base_run"].get<std::string>();
    m.config = debate_config_from_json(j.at("config"));
    for (const auto& [id, b] : j.at("backends").items()) {
      m.backends.emplace(id, backend_config_from_json(id, b));
    }
    if (!j.at("judge_backend").is_null()) m.judge_backend = j["judge_backend"].get<std::string>();
    m.dataset_path = j.at("dataset").at("path").get<std::string>();
    m.dataset_digest = j.at("dataset").at("digest").get<std::string>();
    if (!j.at("sample").is_null()) m.sample = j["sample"].get<std::size_t>();
    m.sample_seed = j.at("sample_seed").get<std::uint64_t>();
    m.question_ids = j.at("question_ids").get<std::vector<std::string>>();
    m.templates_dir = j.value("templates_dir", std::string());
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, fmt::format("manifest: {}", e.what()));
  }
}

fs::path prepare_run_dir(const fs::path& root, const std::string& run_id, bool force) {
  const fs::path dir = root / run_id;
  if (fs::exists(dir / kManifestFile)) {
    if (!force) {
      throw Error(ErrorCode::RunExists,
                  fmt::format("{} already holds a run; pass --force to overwrite", dir.string()));
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  write_file(dir / kManifestFile, to_json(m).dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestFile;
  if (!fs::exists(path)) {
    throw Error(ErrorCode::MissingOriginalRun, fmt::format("no run manifest at {}", path.string()));
  }
  const auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ParseError, fmt::format("{}: invalid JSON", path.string()));
  return manifest_from_json(j);
}

std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

namespace {

const std::vector<std::string> kCellHeader = {"table",    "dataset", "n_agents",  "composition",
                                              "excluded", "scope",   "original",  "loo",
                                              "introspec", "published_color"};

double parse_score(const std::string& text, const std::string& source, std::size_t line) {
  const std::string t = trim(text);
  if (t.empty()) return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ParseError, fmt::format("{}:{}: \"{}\" is not a number", source, line, t));
}

int parse_int(const std::string& text, const std::string& source, std::size_t line) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const int v = std::stoi(t, &used);
    if (used == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ParseError, fmt::format("{}:{}: \"{}\" is not an integer", source, line, t));
}

std::string format_score(double v) { return std::isnan(v) ? std::string() : fmt::format("{}", v); }

}  // namespace

std::vector<TableCell> parse_cells(std::string_view csv, const std::string& source) {
  const auto records = parse_csv(csv);
  if (records.empty()) throw Error(ErrorCode::EmptyInput, fmt::format("{}: empty", source));
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < records[0].fields.size(); ++i) col[trim(records[0].fields[i])] = i;
  for (const char* required : {"dataset", "n_agents", "excluded", "scope", "original", "loo", "introspec"}) {
    if (!col.count(required)) {
      throw Error(ErrorCode::ParseError, fmt::format("{}: missing column \"{}\"", source, required));
    }
  }
  std::vector<TableCell> out;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    auto get = [&](const char* name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= rec.fields.size()) return {};
      return rec.fields[it->second];
    };
    if (rec.fields.size() != records[0].fields.size()) {
      throw Error(ErrorCode::ParseError, fmt::format("{}:{}: expected {} fields, got {}", source,
                                                     rec.line, records[0].fields.size(), rec.fields.size()));
    }
    TableCell c;
    c.table = get("table");
    c.dataset = get("dataset");
    c.n_agents = parse_int(get("n_agents"), source, rec.line);
    c.composition = get("composition");
    c.excluded = parse_int(get("excluded"), source, rec.line);
    c.scope = get("scope");
    c.original = parse_score(get("original"), source, rec.line);
    c.loo = parse_score(get("loo"), source, rec.line);
    c.introspec = parse_score(get("introspec"), source, rec.line);
    if (auto color = trim(get("published_color")); !color.empty()) c.published_color = color;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<TableCell> load_cells(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::IoError, fmt::format("cells file not found: {}", path.string()));
  return parse_cells(read_file(path), path.string());
}

std::string cells_csv(std::span<const TableCell> cells) {
  std::string out = csv_row(kCellHeader);
  for (const auto& c : cells) {
    const std::vector<std::string> row = {c.table,
                                          c.dataset,
                                          std::to_string(c.n_agents),
                                          c.composition,
                                          std::to_string(c.excluded),
                                          c.scope,
                                          format_score(c.original),
                                          format_score(c.loo),
                                          format_score(c.introspec),
                                          c.published_color.value_or("")};
    out += csv_row(row);
  }
  return out;
}

}  // namespace dloo

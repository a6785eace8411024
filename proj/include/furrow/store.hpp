#pragma once

// Dataset ingestion and the append-only run store.
//
// Datasets are UTF-8 line-delimited JSON, one Scenario per line. Loading is
// total: every non-blank line either becomes a valid Scenario or is reported
// with its line number; nothing is accepted silently.
//
// The run store lays out one file per (run, model, method, scenario) cell:
//   <root>/<run_id>/<model>/<method>/<scenario_id>.transcript.json
//   <root>/<run_id>/<model>/<method>/<scenario_id>.record.json
// plus <root>/<run_id>/manifest.json and ledger.json. Completed cells are
// never overwritten; writes are temp-then-rename.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "furrow/detail/sha256.hpp"
#include "furrow/domain.hpp"
#include "furrow/errors.hpp"
#include "furrow/gateway.hpp"

namespace furrow::store {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
  std::string name;
  std::string version;
  std::vector<Scenario> scenarios;
};

struct DatasetIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct DatasetLoadResult {
  Dataset dataset;
  std::vector<DatasetIssue> issues;
  std::string content_digest;  // sha256 of the raw file bytes
};

/// Parses and validates every line, reporting all problems instead of
/// stopping at the first. Valid scenarios and issues together account for
/// every non-blank line.
inline DatasetLoadResult load_dataset_report(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Storage, "cannot open dataset " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string content = buffer.str();

  DatasetLoadResult result;
  result.content_digest = detail::sha256_hex(content);
  result.dataset.name = path.stem().string();
  result.dataset.version = "sha256:" + result.content_digest.substr(0, 12);

  std::map<std::string, std::size_t> seen_ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    std::size_t eol = content.find('\n', pos);
    std::string line = content.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? content.size() + 1 : eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    Scenario s;
    try {
      json j = json::parse(line);
      s = j.get<Scenario>();
    } catch (const Error& e) {
      result.issues.push_back({line_no, e.what()});
      continue;
    } catch (const json::exception& e) {
      result.issues.push_back({line_no, std::string("invalid JSON: ") + e.what()});
      continue;
    }
    bool ok = true;
    for (const auto& violation : validate_scenario(s)) {
      result.issues.push_back({line_no, violation});
      ok = false;
    }
    if (auto it = seen_ids.find(s.id); it != seen_ids.end()) {
      result.issues.push_back({line_no, "duplicate id '" + s.id + "' (first used on line " +
                                            std::to_string(it->second) + ")"});
      ok = false;
    }
    if (ok) {
      seen_ids.emplace(s.id, line_no);
      result.dataset.scenarios.push_back(std::move(s));
    }
  }
  if (result.dataset.scenarios.empty() && result.issues.empty()) {
    result.issues.push_back({0, "empty dataset"});
  }
  return result;
}

/// Strict form: throws with every issue listed when anything is wrong.
inline DatasetLoadResult load_dataset_strict(const fs::path& path) {
  DatasetLoadResult result = load_dataset_report(path);
  if (!result.issues.empty()) {
    std::string message = "dataset " + path.string() + " has " +
                          std::to_string(result.issues.size()) + " problem(s):";
    for (const auto& issue : result.issues) {
      message += "\n  line " + std::to_string(issue.line) + ": " + issue.message;
    }
    throw Error(ErrorKind::Validation, message);
  }
  return result;
}

inline Dataset load_dataset(const fs::path& path) {
  return std::move(load_dataset_strict(path).dataset);
}

/// Partition by category; order preserved within each part.
inline std::map<std::string, std::vector<Scenario>> split_by_category(const Dataset& d) {
  std::map<std::string, std::vector<Scenario>> parts;
  for (const auto& s : d.scenarios) parts[category_key(s.category)].push_back(s);
  return parts;
}

// ---------------------------------------------------------------------------
// Run manifest

struct ManifestInfo {
  std::string run_id;
  std::string created_at;
  std::string tool_version;
  std::string dataset_path;
  std::string dataset_name;
  std::string dataset_version;
  std::string dataset_digest;
  std::vector<std::string> models;
  std::vector<Method> methods;
  json strategy = json::object();
  std::string backend_kind;
  std::string backend_identity;
  std::map<std::string, std::string> template_digests;
  json accuracy = json(nullptr);
  json judge = json(nullptr);
  int workers = 1;
};

inline void to_json(json& j, const ManifestInfo& m) {
  json methods = json::array();
  for (Method method : m.methods) methods.push_back(method_key(method));
  j = json{{"run_id", m.run_id},
           {"created_at", m.created_at},
           {"tool_version", m.tool_version},
           {"dataset",
            {{"path", m.dataset_path},
             {"name", m.dataset_name},
             {"version", m.dataset_version},
             {"digest", m.dataset_digest}}},
           {"models", m.models},
           {"methods", methods},
           {"strategy", m.strategy},
           {"backend", {{"kind", m.backend_kind}, {"identity", m.backend_identity}}},
           {"template_digests", m.template_digests},
           {"accuracy", m.accuracy},
           {"judge", m.judge},
           {"workers", m.workers}};
}

inline void from_json(const json& j, ManifestInfo& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.dataset_path = j.at("dataset").at("path").get<std::string>();
  m.dataset_name = j.at("dataset").at("name").get<std::string>();
  m.dataset_version = j.at("dataset").at("version").get<std::string>();
  m.dataset_digest = j.at("dataset").at("digest").get<std::string>();
  m.models = j.at("models").get<std::vector<std::string>>();
  m.methods.clear();
  for (const auto& key : j.at("methods")) m.methods.push_back(parse_method(key.get<std::string>()));
  m.strategy = j.at("strategy");
  m.backend_kind = j.at("backend").at("kind").get<std::string>();
  m.backend_identity = j.at("backend").at("identity").get<std::string>();
  m.template_digests = j.at("template_digests").get<std::map<std::string, std::string>>();
  m.accuracy = j.at("accuracy");
  m.judge = j.at("judge");
  m.workers = j.at("workers").get<int>();
}

// ---------------------------------------------------------------------------
// Run ledger

struct LedgerEntry {
  std::string scenario_id;
  std::string model_id;
  Method method = Method::Base;
  bool ok = true;
  std::string error;  // set when !ok
};

inline void to_json(json& j, const LedgerEntry& e) {
  j = json{{"scenario_id", e.scenario_id},
           {"model_id", e.model_id},
           {"method", method_key(e.method)},
           {"ok", e.ok},
           {"error", e.error}};
}

inline void from_json(const json& j, LedgerEntry& e) {
  e.scenario_id = j.at("scenario_id").get<std::string>();
  e.model_id = j.at("model_id").get<std::string>();
  e.method = parse_method(j.at("method").get<std::string>());
  e.ok = j.at("ok").get<bool>();
  e.error = j.at("error").get<std::string>();
}

// ---------------------------------------------------------------------------
// Run store

inline std::string sanitize_path_component(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                c == '-' || c == '_' || c == '.';
    out.push_back(safe ? c : '_');
  }
  return out.empty() ? std::string("_") : out;
}

inline bool filesystem_safe(std::string_view name) {
  return !name.empty() && name == sanitize_path_component(name) && name != "." && name != "..";
}

class RunStore {
 public:
  explicit RunStore(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  bool run_exists(const std::string& run_id) const {
    return fs::exists(root_ / sanitize_path_component(run_id));
  }

  std::string transcript_key(const std::string& run_id, const std::string& model,
                             Method method, const std::string& scenario_id) const {
    return cell_key(run_id, model, method, scenario_id) + ".transcript.json";
  }

  std::string record_key(const std::string& run_id, const std::string& model, Method method,
                         const std::string& scenario_id) const {
    return cell_key(run_id, model, method, scenario_id) + ".record.json";
  }

  /// Durable write; DuplicateKey when the cell already holds a transcript.
  std::string persist_transcript(const std::string& run_id, const Transcript& t) const {
    std::string key = transcript_key(run_id, t.model_id, t.method, t.scenario_id);
    write_new(key, json(t).dump(2) + "\n");
    return key;
  }

  /// Partial transcripts from failed runs; stored beside the ledger entry
  /// but never counted as a completed cell.
  std::string persist_partial_transcript(const std::string& run_id, const Transcript& t) const {
    std::string key = cell_key(run_id, t.model_id, t.method, t.scenario_id) + ".partial.json";
    write_new(key, json(t).dump(2) + "\n");
    return key;
  }

  Transcript load_transcript(const std::string& key) const {
    return read_json(key).get<Transcript>();
  }

  std::string persist_record(const std::string& run_id, const EvaluationRecord& r,
                             bool overwrite = false) const {
    std::string key = record_key(run_id, r.model_id, r.method, r.scenario_id);
    if (overwrite) {
      std::error_code ec;
      fs::remove(root_ / key, ec);
    }
    write_new(key, json(r).dump(2) + "\n");
    return key;
  }

  EvaluationRecord load_record(const std::string& key) const {
    return read_json(key).get<EvaluationRecord>();
  }

  /// All transcript keys of a run, sorted for deterministic iteration.
  std::vector<std::string> list_transcripts(const std::string& run_id) const {
    return list_with_suffix(run_id, ".transcript.json");
  }

  std::vector<std::string> list_records(const std::string& run_id) const {
    return list_with_suffix(run_id, ".record.json");
  }

  void write_manifest(const ManifestInfo& manifest) const {
    write_file(sanitize_path_component(manifest.run_id) + "/manifest.json",
               json(manifest).dump(2) + "\n");
  }

  ManifestInfo read_manifest(const std::string& run_id) const {
    std::string key = sanitize_path_component(run_id) + "/manifest.json";
    if (!fs::exists(root_ / key)) {
      throw Error(ErrorKind::MissingRun, "no manifest for run '" + run_id + "'");
    }
    return read_json(key).get<ManifestInfo>();
  }

  void write_ledger(const std::string& run_id, const std::vector<LedgerEntry>& entries) const {
    write_file(sanitize_path_component(run_id) + "/ledger.json", json(entries).dump(2) + "\n");
  }

  std::vector<LedgerEntry> read_ledger(const std::string& run_id) const {
    std::string key = sanitize_path_component(run_id) + "/ledger.json";
    if (!fs::exists(root_ / key)) return {};
    return read_json(key).get<std::vector<LedgerEntry>>();
  }

 private:
  std::string cell_key(const std::string& run_id, const std::string& model, Method method,
                       const std::string& scenario_id) const {
    return sanitize_path_component(run_id) + "/" + sanitize_path_component(model) + "/" +
           method_key(method) + "/" + sanitize_path_component(scenario_id);
  }

  void write_new(const std::string& key, const std::string& bytes) const {
    fs::path target = root_ / key;
    if (fs::exists(target)) {
      throw Error(ErrorKind::DuplicateKey, "store cell already exists: " + key);
    }
    write_file(key, bytes);
  }

  void write_file(const std::string& key, const std::string& bytes) const {
    fs::path target = root_ / key;
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw Error(ErrorKind::Storage, "cannot create " + target.parent_path().string());
    llm::ResponseCache::atomic_write(target, bytes);
  }

  json read_json(const std::string& key) const {
    fs::path file = root_ / key;
    std::ifstream in(file);
    if (!in) throw Error(ErrorKind::Storage, "cannot open " + file.string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, file.string() + ": " + e.what());
    }
  }

  std::vector<std::string> list_with_suffix(const std::string& run_id,
                                            const std::string& suffix) const {
    fs::path run_dir = root_ / sanitize_path_component(run_id);
    if (!fs::exists(run_dir)) {
      throw Error(ErrorKind::MissingRun, "run '" + run_id + "' not found in " + root_.string());
    }
    std::vector<std::string> keys;
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
      if (!entry.is_regular_file()) continue;
      std::string name = entry.path().filename().string();
      if (name.size() >= suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
        keys.push_back(fs::relative(entry.path(), root_).generic_string());
      }
    }
    std::sort(keys.begin(), keys.end());
    return keys;
  }

  fs::path root_;
};

}  // namespace furrow::store

#include "xman/runstore.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fs_util.hpp"
#include "xman/error.hpp"

namespace xman {

namespace fs = std::filesystem;
using detail::FileLock;

std::string_view to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::Staged: return "STAGED";
    case RunStatus::Running: return "RUNNING";
    case RunStatus::Complete: return "COMPLETE";
    case RunStatus::Failed: return "FAILED";
  }
  return "UNKNOWN";
}

std::optional<RunStatus> parse_run_status(std::string_view token) noexcept {
  if (token == "STAGED") return RunStatus::Staged;
  if (token == "RUNNING") return RunStatus::Running;
  if (token == "COMPLETE" || token == "COMPLETED") return RunStatus::Complete;
  if (token == "FAILED") return RunStatus::Failed;
  return std::nullopt;
}

bool is_terminal(RunStatus s) noexcept { return s == RunStatus::Complete || s == RunStatus::Failed; }

// ---- RunInfo <-> YAML -------------------------------------------------------

ConfigTree RunInfo::to_tree() const {
  ConfigTree t;
  t.set("status", std::string(to_string(status)));
  if (start_time) t.set("start_time", *start_time);
  if (end_time) t.set("end_time", *end_time);
  t.set("hostname", hostname);
  t.set("command", command);
  t.set("work_dir", work_dir);
  if (commit_hash) t.set("commit_hash", *commit_hash);
  if (scheduler_job_id) t.set("scheduler_job_id", *scheduler_job_id);
  if (exit_code) t.set("exit_code", static_cast<std::int64_t>(*exit_code));
  t.set("requeue_count", static_cast<std::int64_t>(requeue_count));
  return t;
}

namespace {

std::optional<std::string> text_field(const ConfigTree& t, std::string_view key) {
  auto v = t.get(key);
  if (!v || std::holds_alternative<std::monostate>(*v)) return std::nullopt;
  return format_scalar(*v);
}

}  // namespace

RunInfo RunInfo::from_tree(const ConfigTree& t) {
  RunInfo info;
  auto status = text_field(t, "status");
  if (!status) throw Error(Errc::IoFailure, "info.yaml has no status");
  auto parsed = parse_run_status(*status);
  if (!parsed) throw Error(Errc::IoFailure, "info.yaml has unknown status '" + *status + "'");
  info.status = *parsed;
  info.start_time = text_field(t, "start_time");
  info.end_time = text_field(t, "end_time");
  info.hostname = text_field(t, "hostname").value_or("");
  info.command = text_field(t, "command").value_or("");
  info.work_dir = text_field(t, "work_dir").value_or("");
  info.commit_hash = text_field(t, "commit_hash");
  info.scheduler_job_id = text_field(t, "scheduler_job_id");
  if (auto v = t.get("exit_code"); v && std::holds_alternative<std::int64_t>(*v))
    info.exit_code = static_cast<int>(std::get<std::int64_t>(*v));
  if (auto v = t.get("requeue_count"); v && std::holds_alternative<std::int64_t>(*v))
    info.requeue_count = static_cast<int>(std::get<std::int64_t>(*v));
  return info;
}

// ---- ids ----------------------------------------------------------------------

namespace {

std::optional<std::uint64_t> parse_id(std::string_view s) {
  if (s.empty() || s[0] == '0') return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::uint64_t max_existing_id(const fs::path& logs_root) {
  std::uint64_t best = 0;
  for (auto id : list_runs(logs_root)) best = std::max(best, id.value);
  return best;
}

std::optional<std::uint64_t> read_counter(const fs::path& logs_root) {
  fs::path counter = logs_root / ".id_counter";
  std::error_code ec;
  if (!fs::exists(counter, ec)) return std::nullopt;
  std::string text = detail::read_file(counter);
  while (!text.empty() && (text.back() == '\n' || text.back() == ' ')) text.pop_back();
  std::uint64_t v = 0;
  auto [ptr, err] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (err != std::errc() || ptr != text.data() + text.size())
    throw Error(Errc::IoFailure, "corrupt id counter '" + counter.string() + "'");
  return v;
}

void write_info(const fs::path& run_dir, const RunInfo& info) {
  save_yaml_file(run_dir / "metadata" / "info.yaml", info.to_tree());
}

std::map<std::string, std::set<std::string>> read_metric_keys(const fs::path& file) {
  std::map<std::string, std::set<std::string>> out;
  std::error_code ec;
  if (!fs::exists(file, ec)) return out;
  YAML::Node root;
  try {
    root = YAML::LoadFile(file.string());
  } catch (const YAML::Exception& e) {
    throw Error(Errc::IoFailure, "cannot parse '" + file.string() + "': " + e.msg);
  }
  if (!root.IsMap()) return out;
  for (const auto& kv : root) {
    auto& keys = out[kv.first.as<std::string>()];
    if (kv.second.IsSequence())
      for (const auto& k : kv.second) keys.insert(k.as<std::string>());
  }
  return out;
}

void write_metric_keys(const fs::path& file, const std::map<std::string, std::set<std::string>>& keys) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  for (const auto& [log, names] : keys) {
    out << YAML::Key << log << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& n : names) out << n;
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;
  detail::write_file_atomic(file, std::string(out.c_str()) + "\n");
}

void require_running(const RunRecord& record, std::string_view what) {
  if (record.info.status != RunStatus::Running)
    throw Error(Errc::NotRunning, std::string(what) + " on run " + record.id.str() + " with status " +
                                      std::string(to_string(record.info.status)));
}

}  // namespace

fs::path run_directory(const fs::path& logs_root, RunId id) { return logs_root / id.str(); }

std::vector<RunId> list_runs(const fs::path& logs_root) {
  std::vector<RunId> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(logs_root, ec)) {
    if (!entry.is_directory(ec)) continue;
    if (auto v = parse_id(entry.path().filename().string())) ids.push_back(RunId{*v});
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

RunId peek_next_run_id(const fs::path& logs_root) {
  std::error_code ec;
  if (!fs::exists(logs_root, ec)) return RunId{1};
  std::uint64_t last = read_counter(logs_root).value_or(0);
  last = std::max(last, max_existing_id(logs_root));
  return RunId{last + 1};
}

RunId allocate_run_id(const fs::path& logs_root, std::chrono::milliseconds lock_timeout) {
  std::error_code ec;
  fs::create_directories(logs_root, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create logs root '" + logs_root.string() + "': " + ec.message());

  FileLock lock(logs_root / ".id_counter.lock", lock_timeout);
  auto counter = read_counter(logs_root);
  std::uint64_t next = (counter ? *counter : max_existing_id(logs_root)) + 1;
  while (fs::exists(logs_root / std::to_string(next), ec)) ++next;

  fs::path run_dir = logs_root / std::to_string(next);
  fs::create_directories(run_dir / "metadata", ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create '" + run_dir.string() + "': " + ec.message());
  RunInfo info;
  info.hostname = detail::hostname();
  write_info(run_dir, info);
  detail::write_file_atomic(logs_root / ".id_counter", std::to_string(next) + "\n");
  return RunId{next};
}

// ---- records ------------------------------------------------------------------

RunRecord init_run(const fs::path& logs_root, RunId id, const ConfigTree& config, const ConfigTree& settings,
                   RunInfo info) {
  fs::path root = run_directory(logs_root, id);
  std::error_code ec;
  if (!fs::is_directory(root / "metadata", ec))
    throw Error(Errc::UnknownRun, "run " + id.str() + " was not allocated under '" + logs_root.string() + "'");
  if (fs::exists(root / "metadata" / "config.yaml", ec))
    throw Error(Errc::AlreadyInitialized, "run " + id.str() + " is already initialized");
  if (read_info(root).status != RunStatus::Staged)
    throw Error(Errc::AlreadyInitialized, "run " + id.str() + " is no longer STAGED");

  for (const char* sub : {"metrics/keys", "artifacts"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create '" + (root / sub).string() + "': " + ec.message());
  }
  save_yaml_file(root / "metadata" / "config.yaml", config);
  save_yaml_file(root / "metadata" / "mlxp.yaml", settings);
  write_metric_keys(root / "metrics" / "keys" / "metrics.yaml", {});
  RunInfo stored = modify_info(root, [&](RunInfo& current) {
    info.status = current.status;
    current = info;
  });
  return RunRecord{id, root, config, stored, settings, {}};
}

RunRecord open_run_dir(const fs::path& run_dir) {
  std::error_code ec;
  fs::path info_file = run_dir / "metadata" / "info.yaml";
  if (!fs::exists(info_file, ec)) throw Error(Errc::UnknownRun, "no run at '" + run_dir.string() + "'");
  RunRecord r;
  auto id = parse_id(run_dir.filename().string());
  r.id = RunId{id.value_or(0)};
  r.root = run_dir;
  r.info = read_info(run_dir);
  if (fs::exists(run_dir / "metadata" / "config.yaml", ec)) r.config = load_yaml_file(run_dir / "metadata" / "config.yaml");
  if (fs::exists(run_dir / "metadata" / "mlxp.yaml", ec)) r.settings = load_yaml_file(run_dir / "metadata" / "mlxp.yaml");
  r.metric_keys = read_metric_keys(run_dir / "metrics" / "keys" / "metrics.yaml");
  return r;
}

RunRecord open_run(const fs::path& logs_root, RunId id) { return open_run_dir(run_directory(logs_root, id)); }

RunInfo read_info(const fs::path& run_dir) {
  return RunInfo::from_tree(load_yaml_file(run_dir / "metadata" / "info.yaml"));
}

RunInfo modify_info(const fs::path& run_dir, const std::function<void(RunInfo&)>& edit) {
  FileLock lock(run_dir / "metadata" / ".info.lock", kDefaultLockTimeout);
  RunInfo info = read_info(run_dir);
  edit(info);
  write_info(run_dir, info);
  return info;
}

void update_status(RunRecord& record, RunStatus next, std::optional<int> exit_code, bool requeue) {
  record.info = modify_info(record.root, [&](RunInfo& info) {
    const RunStatus cur = info.status;
    const bool legal = (cur == RunStatus::Staged && (next == RunStatus::Running || next == RunStatus::Failed)) ||
                       (cur == RunStatus::Running && is_terminal(next)) ||
                       (cur == RunStatus::Running && next == RunStatus::Running && requeue);
    if (!legal)
      throw Error(Errc::IllegalTransition, "run " + record.id.str() + ": " + std::string(to_string(cur)) +
                                               " -> " + std::string(to_string(next)));
    info.status = next;
    if (next == RunStatus::Running) {
      if (cur == RunStatus::Running) ++info.requeue_count;
      else info.start_time = detail::utc_timestamp();
    } else {
      info.end_time = detail::utc_timestamp();
      info.exit_code = exit_code;
    }
  });
}

// ---- metrics --------------------------------------------------------------------

void log_metrics(RunRecord& record, const MetricLine& line) {
  require_running(record, "log_metrics");
  if (!is_valid_key(line.log_name) || !detail::is_path_component(line.log_name))
    throw Error(Errc::InvalidName, "invalid log name '" + line.log_name + "'");

  nlohmann::ordered_json obj = nlohmann::ordered_json::object();
  for (const auto& [key, value] : line.entry) {
    if (!is_valid_key(key)) throw Error(Errc::InvalidName, "invalid metric key '" + key + "'");
    if (auto* d = std::get_if<double>(&value)) {
      if (!std::isfinite(*d)) throw Error(Errc::NonFiniteValue, "metric '" + key + "' is not finite");
      obj[key] = *d;
    } else {
      obj[key] = std::get<std::int64_t>(value);
    }
  }
  detail::append_line(record.metrics_dir() / (line.log_name + ".json"), obj.dump());

  bool changed = !record.metric_keys.count(line.log_name);
  auto& known = record.metric_keys[line.log_name];
  for (const auto& [key, value] : line.entry) changed |= known.insert(key).second;
  if (changed || !fs::exists(record.metrics_dir() / "keys" / "metrics.yaml"))
    write_metric_keys(record.metrics_dir() / "keys" / "metrics.yaml", record.metric_keys);
}

void refresh_metric_keys(RunRecord& record) {
  auto keys = read_metric_keys(record.metrics_dir() / "keys" / "metrics.yaml");
  const auto before = keys;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(record.metrics_dir(), ec)) {
    if (entry.path().extension() != ".json" || !entry.is_regular_file(ec)) continue;
    auto& names = keys[entry.path().stem().string()];
    std::istringstream in(detail::read_file(entry.path()));
    std::string text;
    while (std::getline(in, text)) {
      auto obj = nlohmann::json::parse(text, nullptr, false);
      if (!obj.is_object()) continue;  // torn final line of a killed writer
      for (const auto& item : obj.items()) names.insert(item.key());
    }
  }
  record.metric_keys = keys;
  if (keys != before) write_metric_keys(record.metrics_dir() / "keys" / "metrics.yaml", keys);
}

// ---- artifacts and checkpoints ----------------------------------------------------

namespace {

std::function<void()>& fault_hook() {
  static std::function<void()> hook;
  return hook;
}

std::mutex fault_hook_mutex;

void write_bytes(const fs::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(Errc::IoFailure, "short write to '" + path.string() + "'");
}

}  // namespace

fs::path log_artifact(const RunRecord& record, std::string_view category, std::string_view name,
                      std::span<const std::byte> bytes, bool overwrite) {
  require_running(record, "log_artifact");
  if (!detail::is_path_component(category))
    throw Error(Errc::InvalidName, "invalid artifact category '" + std::string(category) + "'");
  if (!detail::is_path_component(name))
    throw Error(Errc::InvalidName, "invalid artifact name '" + std::string(name) + "'");
  fs::path dir = record.artifacts_dir() / category;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create '" + dir.string() + "': " + ec.message());
  fs::path target = dir / name;
  if (!overwrite && fs::exists(target, ec))
    throw Error(Errc::ArtifactExists, "artifact '" + target.string() + "' already exists");
  detail::write_file_atomic(target, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  return target;
}

fs::path checkpoint_path(const RunRecord& record) {
  return record.artifacts_dir() / "Checkpoint" / "lastckpt.pkl";
}

void set_checkpoint_fault_hook(std::function<void()> hook) {
  std::lock_guard lock(fault_hook_mutex);
  fault_hook() = std::move(hook);
}

void log_checkpoint(const RunRecord& record, std::span<const std::byte> bytes) {
  require_running(record, "log_checkpoint");
  fs::path target = checkpoint_path(record);
  std::error_code ec;
  fs::create_directories(target.parent_path(), ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create '" + target.parent_path().string() + "'");
  fs::path tmp = target;
  tmp += ".partial";
  write_bytes(tmp, bytes);
  {
    std::function<void()> hook;
    {
      std::lock_guard lock(fault_hook_mutex);
      hook = fault_hook();
    }
    if (hook) hook();
  }
  fs::rename(tmp, target, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot publish checkpoint: " + ec.message());
}

std::optional<std::vector<std::byte>> load_checkpoint(const RunRecord& record) {
  fs::path target = checkpoint_path(record);
  std::error_code ec;
  if (!fs::exists(target, ec)) return std::nullopt;
  std::string data = detail::read_file(target);
  std::vector<std::byte> out(data.size());
  std::transform(data.begin(), data.end(), out.begin(), [](char c) { return static_cast<std::byte>(c); });
  return out;
}

// ---- layout ----------------------------------------------------------------------

std::vector<std::string> validate_layout(const fs::path& run_dir) {
  std::vector<std::string> violations;
  std::error_code ec;
  auto need_file = [&](const fs::path& rel) {
    if (!fs::is_regular_file(run_dir / rel, ec)) violations.push_back("missing file " + rel.string());
  };
  auto need_dir = [&](const fs::path& rel) {
    if (!fs::is_directory(run_dir / rel, ec)) violations.push_back("missing directory " + rel.string());
  };
  need_dir("metadata");
  need_file("metadata/config.yaml");
  need_file("metadata/info.yaml");
  need_file("metadata/mlxp.yaml");
  need_dir("metrics");
  need_dir("metrics/keys");
  need_file("metrics/keys/metrics.yaml");
  need_dir("artifacts");
  if (!violations.empty()) return violations;

  try {
    load_yaml_file(run_dir / "metadata" / "config.yaml");
    load_yaml_file(run_dir / "metadata" / "mlxp.yaml");
    RunInfo info = read_info(run_dir);
    if (is_terminal(info.status) != info.end_time.has_value())
      violations.push_back("end_time must be present exactly for terminal states");
  } catch (const Error& e) {
    violations.push_back(std::string("unreadable metadata: ") + e.what());
  }

  std::map<std::string, std::set<std::string>> keys;
  try {
    keys = read_metric_keys(run_dir / "metrics" / "keys" / "metrics.yaml");
  } catch (const Error& e) {
    violations.push_back(e.what());
  }
  for (const auto& [log, names] : keys) {
    if (!fs::is_regular_file(run_dir / "metrics" / (log + ".json"), ec))
      violations.push_back("keys catalog lists '" + log + "' but metrics/" + log + ".json is missing");
  }
  for (const auto& entry : fs::directory_iterator(run_dir / "metrics", ec)) {
    if (entry.path().extension() != ".json") continue;
    std::string log = entry.path().stem().string();
    if (!keys.count(log)) violations.push_back("metrics/" + log + ".json is not in the keys catalog");
  }
  return violations;
}

}  // namespace xman

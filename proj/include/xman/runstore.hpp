#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "xman/config.hpp"
#include "xman/run_id.hpp"

namespace xman {

enum class RunStatus { Staged, Running, Complete, Failed };

std::string_view to_string(RunStatus s) noexcept;
/// Accepts the canonical tokens plus `COMPLETED` as an alias of `COMPLETE`.
std::optional<RunStatus> parse_run_status(std::string_view token) noexcept;
bool is_terminal(RunStatus s) noexcept;

struct RunInfo {
  RunStatus status = RunStatus::Staged;
  std::optional<std::string> start_time;  // RFC 3339 UTC
  std::optional<std::string> end_time;
  std::string hostname;
  std::string command;
  std::string work_dir;
  std::optional<std::string> commit_hash;
  std::optional<std::string> scheduler_job_id;
  std::optional<int> exit_code;
  int requeue_count = 0;

  ConfigTree to_tree() const;
  static RunInfo from_tree(const ConfigTree& tree);
};

using MetricValue = std::variant<std::int64_t, double>;

struct MetricLine {
  std::string log_name = "train";
  std::vector<std::pair<std::string, MetricValue>> entry;
};

struct RunRecord {
  RunId id;
  std::filesystem::path root;  // logs/<id>
  ConfigTree config;
  RunInfo info;
  ConfigTree settings;
  std::map<std::string, std::set<std::string>> metric_keys;  // mirror of metrics/keys/metrics.yaml

  std::filesystem::path metadata_dir() const { return root / "metadata"; }
  std::filesystem::path metrics_dir() const { return root / "metrics"; }
  std::filesystem::path artifacts_dir() const { return root / "artifacts"; }
};

inline constexpr std::chrono::milliseconds kDefaultLockTimeout{30000};

/// Next id from `<logs_root>/.id_counter` under an flock on `.id_counter.lock`.
/// The run's `metadata/info.yaml` exists with status STAGED on return.
RunId allocate_run_id(const std::filesystem::path& logs_root,
                      std::chrono::milliseconds lock_timeout = kDefaultLockTimeout);

/// Id the next allocation would return, without taking it.
RunId peek_next_run_id(const std::filesystem::path& logs_root);

std::filesystem::path run_directory(const std::filesystem::path& logs_root, RunId id);

RunRecord init_run(const std::filesystem::path& logs_root, RunId id, const ConfigTree& config,
                   const ConfigTree& settings, RunInfo info);

/// Loads a run's metadata from disk. Throws UnknownRun when absent.
RunRecord open_run(const std::filesystem::path& logs_root, RunId id);
RunRecord open_run_dir(const std::filesystem::path& run_dir);

void log_metrics(RunRecord& record, const MetricLine& line);

/// Adds logs and keys found in `metrics/*.json` but missing from the keys catalog
/// (children may append JSON lines directly).
void refresh_metric_keys(RunRecord& record);

std::filesystem::path log_artifact(const RunRecord& record, std::string_view category, std::string_view name,
                                   std::span<const std::byte> bytes, bool overwrite = false);

void log_checkpoint(const RunRecord& record, std::span<const std::byte> bytes);
std::optional<std::vector<std::byte>> load_checkpoint(const RunRecord& record);
std::filesystem::path checkpoint_path(const RunRecord& record);

/// Called between the temp-file write and the rename; tests use it to inject crashes.
void set_checkpoint_fault_hook(std::function<void()> hook);

/// Re-reads info.yaml under the run's lock, applies the transition and rewrites it.
/// RUNNING -> RUNNING is legal only with `requeue`, which bumps requeue_count.
void update_status(RunRecord& record, RunStatus next, std::optional<int> exit_code = std::nullopt,
                   bool requeue = false);

/// Read-modify-write of info.yaml under the per-run lock.
RunInfo modify_info(const std::filesystem::path& run_dir, const std::function<void(RunInfo&)>& edit);
RunInfo read_info(const std::filesystem::path& run_dir);

/// Structural check of one run directory; returns violations (empty when valid).
std::vector<std::string> validate_layout(const std::filesystem::path& run_dir);

/// Numeric run directories under a logs root, ascending.
std::vector<RunId> list_runs(const std::filesystem::path& logs_root);

}  // namespace xman

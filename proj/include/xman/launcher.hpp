#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xman/config.hpp"
#include "xman/runstore.hpp"
#include "xman/versioning.hpp"

namespace xman {

struct Settings {
  std::filesystem::path logs_root;
  std::filesystem::path config_dir;
  bool config_dir_explicit = false;  // given by flag or env rather than defaulted
  bool versioning_enabled = false;
  SyncPolicy interactive_policy = SyncPolicy::Prompt;
  std::optional<std::string> scheduler;
  double lock_timeout_s = 30.0;
  std::filesystem::path snapshot_root;

  std::chrono::milliseconds lock_timeout() const;
  /// Contents of a run's `metadata/mlxp.yaml`.
  ConfigTree to_tree() const;
};

/// Values given on the command line; unset fields fall through to env, file, default.
struct SettingsFlags {
  std::optional<std::filesystem::path> logs_root;
  std::optional<std::filesystem::path> config_dir;
  std::optional<bool> versioning_enabled;
  std::optional<std::string> interactive_policy;
  std::optional<std::string> scheduler;
  std::optional<double> lock_timeout_s;
  std::optional<std::filesystem::path> snapshot_root;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;
EnvLookup process_env();

/// CLI flag > XMAN_* env var > `<config_dir>/mlxp.yaml` > default. Relative paths
/// are taken against `project_dir`. Throws InvalidSettings on bad values.
Settings resolve_settings(const std::filesystem::path& project_dir, const SettingsFlags& flags,
                          const EnvLookup& env = process_env());

/// Experiment defaults for `settings`; a defaulted config dir that does not exist yields {}.
ConfigTree load_experiment_defaults(const Settings& settings);

/// Commit a batch of runs is pinned to, computed once per invocation.
struct VersionPin {
  std::optional<std::string> commit;
  std::filesystem::path repo_root;
  std::filesystem::path relative_dir;
  std::vector<std::string> warnings;
};

/// Inspects and syncs the repository holding `project_dir`, then ensures the snapshot.
/// Returns an empty pin when versioning is disabled.
VersionPin prepare_version_pin(const Settings& settings, const std::filesystem::path& project_dir,
                               const PromptIo& io, const MaterializeHook& hook = {});

/// Settings tree stored with each run, including where the run's snapshot lives.
ConfigTree run_settings_tree(const Settings& settings, const VersionPin& pin);

/// Where a stored run must execute, from its own metadata.
std::filesystem::path run_workdir(const RunRecord& record);

struct LaunchOptions {
  std::filesystem::path project_dir;  // empty: current directory
  bool requeue = false;
  bool forward_signals = true;
  PromptIo prompt;
  MaterializeHook on_materialize;
};

/// Binds (or reuses a pre-assigned STAGED) run, executes `command` in the run's work
/// dir with XMAN_RUN_DIR / XMAN_CONFIG / XMAN_LOG_NAME_DEFAULT set, and records the outcome.
RunRecord launch_single(const Settings& settings, const ConfigTree& config, const std::vector<std::string>& command,
                        std::optional<RunId> pre_assigned = std::nullopt, const LaunchOptions& options = {});

/// Allocates and executes each run of `plan` in order, appending the run's tuple to
/// `command`. A failing run does not stop later ones.
std::vector<RunRecord> launch_multirun(const Settings& settings, const RunPlan& plan,
                                       const std::vector<std::string>& command, const LaunchOptions& options = {});

/// Runs an already-initialized run; the scheduler's per-job entrypoint.
RunRecord execute_run(RunRecord record, const std::vector<std::string>& argv, const LaunchOptions& options = {});

/// Deletes snapshots that no STAGED or RUNNING run under the logs root refers to.
std::vector<std::string> purge_snapshots(const Settings& settings);

}  // namespace xman

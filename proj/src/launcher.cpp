#include "xman/launcher.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include "fs_util.hpp"
#include "xman/error.hpp"
#include "xman/process.hpp"

namespace xman {

namespace fs = std::filesystem;

namespace {

fs::path absolute_against(const fs::path& base, const fs::path& p) {
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

bool parse_bool_setting(const Scalar& v, const std::string& where) {
  if (auto* b = std::get_if<bool>(&v)) return *b;
  if (auto* i = std::get_if<std::int64_t>(&v); i && (*i == 0 || *i == 1)) return *i == 1;
  throw Error(Errc::InvalidSettings, where + ": expected a boolean, got '" + format_scalar(v) + "'");
}

double parse_timeout_setting(const Scalar& v, const std::string& where) {
  auto d = as_double(v);
  if (!d || !std::isfinite(*d) || *d < 0)
    throw Error(Errc::InvalidSettings, where + ": expected a non-negative number, got '" + format_scalar(v) + "'");
  return *d;
}

std::string text_setting(const Scalar& v) {
  if (auto* s = std::get_if<std::string>(&v)) return *s;
  if (std::holds_alternative<std::monostate>(v)) return {};
  return format_scalar(v);
}

SyncPolicy policy_setting(const std::string& name, const std::string& where) {
  auto p = parse_sync_policy(name);
  if (!p)
    throw Error(Errc::InvalidSettings,
                where + ": unknown interactive_policy '" + name + "' (prompt, auto_commit, ignore, fail)");
  return *p;
}

std::optional<Scalar> tree_scalar(const ConfigTree& tree, std::string_view key) { return tree.get(key); }

}  // namespace

std::chrono::milliseconds Settings::lock_timeout() const {
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(lock_timeout_s * 1000.0)));
}

ConfigTree Settings::to_tree() const {
  ConfigTree t;
  t.set("logs_root", logs_root.string());
  t.set("config_dir", config_dir.string());
  t.set("versioning_enabled", versioning_enabled);
  t.set("interactive_policy", std::string(to_string(interactive_policy)));
  t.set("scheduler", scheduler ? Scalar(*scheduler) : Scalar{});
  t.set("lock_timeout_s", lock_timeout_s);
  t.set("snapshot_root", snapshot_root.string());
  return t;
}

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

Settings resolve_settings(const fs::path& project_dir, const SettingsFlags& flags, const EnvLookup& env) {
  const fs::path base = fs::absolute(project_dir.empty() ? fs::current_path() : project_dir);
  auto from_env = [&](const char* name) { return env ? env(name) : std::nullopt; };

  Settings s;
  if (flags.config_dir) {
    s.config_dir = absolute_against(base, *flags.config_dir);
    s.config_dir_explicit = true;
  } else if (auto e = from_env("XMAN_CONFIG_DIR")) {
    s.config_dir = absolute_against(base, *e);
    s.config_dir_explicit = true;
  } else {
    s.config_dir = base / "configs";
  }

  ConfigTree file;
  std::error_code ec;
  if (fs::exists(s.config_dir / "mlxp.yaml", ec)) file = load_yaml_file(s.config_dir / "mlxp.yaml");
  const std::string file_name = (s.config_dir / "mlxp.yaml").string();

  // Each setting: flag, then env, then file, then default.
  if (flags.logs_root) s.logs_root = absolute_against(base, *flags.logs_root);
  else if (auto e = from_env("XMAN_LOGS_ROOT")) s.logs_root = absolute_against(base, *e);
  else if (auto f = tree_scalar(file, "logs_root")) s.logs_root = absolute_against(base, text_setting(*f));
  else s.logs_root = base / "logs";

  if (flags.versioning_enabled) s.versioning_enabled = *flags.versioning_enabled;
  else if (auto e = from_env("XMAN_VERSIONING")) s.versioning_enabled = parse_bool_setting(parse_scalar(*e), "XMAN_VERSIONING");
  else if (auto f = tree_scalar(file, "versioning_enabled")) s.versioning_enabled = parse_bool_setting(*f, file_name);

  if (flags.interactive_policy) s.interactive_policy = policy_setting(*flags.interactive_policy, "--interactive-policy");
  else if (auto e = from_env("XMAN_INTERACTIVE_POLICY")) s.interactive_policy = policy_setting(*e, "XMAN_INTERACTIVE_POLICY");
  else if (auto f = tree_scalar(file, "interactive_policy")) s.interactive_policy = policy_setting(text_setting(*f), file_name);

  if (flags.scheduler) s.scheduler = *flags.scheduler;
  else if (auto e = from_env("XMAN_SCHEDULER")) s.scheduler = *e;
  else if (auto f = tree_scalar(file, "scheduler")) {
    std::string name = text_setting(*f);
    if (!name.empty()) s.scheduler = name;
  }
  if (s.scheduler && s.scheduler->empty()) s.scheduler.reset();

  if (flags.lock_timeout_s) s.lock_timeout_s = parse_timeout_setting(*flags.lock_timeout_s, "--lock-timeout");
  else if (auto e = from_env("XMAN_LOCK_TIMEOUT_S")) s.lock_timeout_s = parse_timeout_setting(parse_scalar(*e), "XMAN_LOCK_TIMEOUT_S");
  else if (auto f = tree_scalar(file, "lock_timeout_s")) s.lock_timeout_s = parse_timeout_setting(*f, file_name);

  if (flags.snapshot_root) s.snapshot_root = absolute_against(base, *flags.snapshot_root);
  else if (auto e = from_env("XMAN_SNAPSHOT_ROOT")) s.snapshot_root = absolute_against(base, *e);
  else if (auto f = tree_scalar(file, "snapshot_root")) s.snapshot_root = absolute_against(base, text_setting(*f));
  else s.snapshot_root = s.logs_root / ".snapshots";
  return s;
}

ConfigTree load_experiment_defaults(const Settings& settings) {
  std::error_code ec;
  if (!settings.config_dir_explicit && !fs::exists(settings.config_dir / "config.yaml", ec)) return {};
  return load_defaults(settings.config_dir);
}

VersionPin prepare_version_pin(const Settings& settings, const fs::path& project_dir, const PromptIo& io,
                               const MaterializeHook& hook) {
  VersionPin pin;
  if (!settings.versioning_enabled) return pin;
  RepoState state = without_paths(inspect_repo(project_dir), {settings.logs_root, settings.snapshot_root});
  if (state.head_commit.empty() && state.clean())
    throw Error(Errc::UnknownCommit, "repository '" + state.repo_root.string() + "' has no commits to pin");
  SyncResult sync = interactive_sync(state, settings.interactive_policy, io);
  if (sync.commit.empty())
    throw Error(Errc::UnknownCommit, "repository '" + state.repo_root.string() + "' has no commits to pin");
  Snapshot snap = ensure_snapshot(state.repo_root, sync.commit, settings.snapshot_root, hook);
  pin.commit = snap.commit_hash;
  pin.repo_root = state.repo_root;
  std::error_code ec;
  pin.relative_dir = fs::weakly_canonical(project_dir, ec).lexically_relative(fs::weakly_canonical(state.repo_root, ec));
  if (pin.relative_dir.empty()) pin.relative_dir = ".";
  pin.warnings = std::move(sync.warnings);
  return pin;
}

ConfigTree run_settings_tree(const Settings& settings, const VersionPin& pin) {
  ConfigTree t = settings.to_tree();
  if (pin.commit) {
    t.set("repo_root", pin.repo_root.string());
    t.set("relative_dir", pin.relative_dir.generic_string());
  }
  return t;
}

fs::path run_workdir(const RunRecord& record) {
  JobPin pin;
  pin.live_dir = record.info.work_dir;
  if (auto v = record.settings.get("versioning_enabled"))
    pin.versioning_enabled = parse_bool_setting(*v, (record.metadata_dir() / "mlxp.yaml").string());
  pin.commit_hash = record.info.commit_hash;
  if (auto v = record.settings.get("snapshot_root")) pin.snapshot_root = text_setting(*v);
  if (auto v = record.settings.get("relative_dir")) pin.relative_dir = text_setting(*v);
  if (pin.versioning_enabled && !pin.commit_hash)
    throw Error(Errc::SnapshotMissing, "run " + record.id.str() + " has versioning enabled but no pinned commit");
  return resolve_job_workdir(pin);
}

RunRecord execute_run(RunRecord record, const std::vector<std::string>& argv, const LaunchOptions& options) {
  if (argv.empty()) throw Error(Errc::InvalidSettings, "empty command");
  fs::path workdir;
  try {
    workdir = run_workdir(record);
  } catch (const Error&) {
    if (record.info.status == RunStatus::Staged) update_status(record, RunStatus::Failed);
    throw;
  }
  update_status(record, RunStatus::Running, std::nullopt, options.requeue);
  record.info = modify_info(record.root, [](RunInfo& info) { info.hostname = detail::hostname(); });

  ProcessOptions opts;
  opts.cwd = workdir;
  opts.forward_signals = options.forward_signals;
  opts.env = {{"XMAN_RUN_DIR", record.root.string()},
              {"XMAN_CONFIG", (record.metadata_dir() / "config.yaml").string()},
              {"XMAN_LOG_NAME_DEFAULT", "train"}};
  ProcessResult result;
  try {
    result = run_process(argv, opts);
  } catch (const Error&) {
    update_status(record, RunStatus::Failed);
    throw;
  }
  refresh_metric_keys(record);
  update_status(record, result.ok() ? RunStatus::Complete : RunStatus::Failed, result.status());
  return record;
}

namespace {

RunRecord bind_new_run(const Settings& settings, const ConfigTree& config, const std::vector<std::string>& argv,
                       const fs::path& project_dir, const VersionPin& pin) {
  RunId id = allocate_run_id(settings.logs_root, settings.lock_timeout());
  RunInfo info;
  info.hostname = detail::hostname();
  info.command = shell_join(argv);
  info.work_dir = project_dir.string();
  info.commit_hash = pin.commit;
  return init_run(settings.logs_root, id, config, run_settings_tree(settings, pin), std::move(info));
}

fs::path project_dir_of(const LaunchOptions& options) {
  return fs::absolute(options.project_dir.empty() ? fs::current_path() : options.project_dir).lexically_normal();
}

}  // namespace

RunRecord launch_single(const Settings& settings, const ConfigTree& config, const std::vector<std::string>& command,
                        std::optional<RunId> pre_assigned, const LaunchOptions& options) {
  if (command.empty()) throw Error(Errc::InvalidSettings, "empty command");
  if (pre_assigned) {
    RunRecord record = open_run(settings.logs_root, *pre_assigned);
    std::error_code ec;
    if (!fs::exists(record.metadata_dir() / "config.yaml", ec)) {
      RunInfo info = record.info;
      info.hostname = detail::hostname();
      info.command = shell_join(command);
      if (info.work_dir.empty()) info.work_dir = project_dir_of(options).string();
      record = init_run(settings.logs_root, *pre_assigned, config, run_settings_tree(settings, {}), std::move(info));
    }
    return execute_run(std::move(record), command, options);
  }
  const fs::path project = project_dir_of(options);
  VersionPin pin = prepare_version_pin(settings, project, options.prompt, options.on_materialize);
  return execute_run(bind_new_run(settings, config, command, project, pin), command, options);
}

std::vector<RunRecord> launch_multirun(const Settings& settings, const RunPlan& plan,
                                       const std::vector<std::string>& command, const LaunchOptions& options) {
  if (command.empty()) throw Error(Errc::InvalidSettings, "empty command");
  const fs::path project = project_dir_of(options);
  VersionPin pin = prepare_version_pin(settings, project, options.prompt, options.on_materialize);
  std::vector<RunRecord> out;
  out.reserve(plan.runs.size());
  for (const PlannedRun& run : plan.runs) {
    std::vector<std::string> argv = command;
    for (auto& tok : run.override_args()) argv.push_back(std::move(tok));
    RunRecord record = bind_new_run(settings, run.config, argv, project, pin);
    const RunId id = record.id;
    try {
      record = execute_run(std::move(record), argv, options);
    } catch (const Error& e) {
      if (e.code() != Errc::SpawnFailure && e.code() != Errc::SnapshotMissing) throw;
      record = open_run(settings.logs_root, id);
    }
    out.push_back(std::move(record));
  }
  return out;
}

std::vector<std::string> purge_snapshots(const Settings& settings) {
  std::set<std::string> keep;
  std::error_code ec;
  if (fs::is_directory(settings.logs_root, ec)) {
    for (RunId id : list_runs(settings.logs_root)) {
      RunInfo info = read_info(run_directory(settings.logs_root, id));
      if ((info.status == RunStatus::Staged || info.status == RunStatus::Running) && info.commit_hash)
        keep.insert(*info.commit_hash);
    }
  }
  return remove_snapshots_except(settings.snapshot_root, keep);
}

}  // namespace xman

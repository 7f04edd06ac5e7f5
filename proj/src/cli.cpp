#include "xman/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <nlohmann/json.hpp>
#include <ostream>

#include "xman/error.hpp"
#include "xman/query.hpp"
#include "xman/reader.hpp"
#include "xman/runstore.hpp"
#include "xman/scheduler.hpp"

namespace xman {

namespace fs = std::filesystem;

namespace {

struct SettingsArgs {
  std::string logs, config_dir, policy, snapshot_root;
  double lock_timeout = 0;
  bool versioning = false;
  CLI::Option* logs_opt = nullptr;
  CLI::Option* config_dir_opt = nullptr;
  CLI::Option* policy_opt = nullptr;
  CLI::Option* snapshot_opt = nullptr;
  CLI::Option* lock_opt = nullptr;
  CLI::Option* versioning_opt = nullptr;

  void attach(CLI::App* cmd, bool full) {
    logs_opt = cmd->add_option("--logs", logs, "Logs root (default: logs)");
    if (!full) return;
    config_dir_opt = cmd->add_option("--config-dir", config_dir, "Directory holding config.yaml and mlxp.yaml");
    versioning_opt = cmd->add_flag("--versioning,!--no-versioning", versioning, "Pin runs to a committed snapshot");
    policy_opt = cmd->add_option("--interactive-policy", policy, "prompt, auto_commit, ignore or fail");
    lock_opt = cmd->add_option("--lock-timeout", lock_timeout, "Seconds to wait for a logs-root lock");
    snapshot_opt = cmd->add_option("--snapshot-root", snapshot_root, "Where commit snapshots are kept");
  }

  SettingsFlags flags() const {
    SettingsFlags f;
    if (logs_opt && logs_opt->count()) f.logs_root = logs;
    if (config_dir_opt && config_dir_opt->count()) f.config_dir = config_dir;
    if (versioning_opt && versioning_opt->count()) f.versioning_enabled = versioning;
    if (policy_opt && policy_opt->count()) f.interactive_policy = policy;
    if (lock_opt && lock_opt->count()) f.lock_timeout_s = lock_timeout;
    if (snapshot_opt && snapshot_opt->count()) f.snapshot_root = snapshot_root;
    return f;
  }
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::BadOverrideSyntax:
    case Errc::EmptyValueList:
    case Errc::DuplicateSweepValue:
    case Errc::InvalidSettings:
    case Errc::InvalidName:
    case Errc::NonFiniteValue:
    case Errc::SyntaxError:
    case Errc::UnknownOperator:
      return 2;
    default:
      return 1;
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? std::string(sep) : "") + parts[i];
  return out;
}

OutputFormat output_format(const std::string& name) {
  auto f = parse_output_format(name);
  if (!f) throw UsageError("unknown format '" + name + "'");
  return *f;
}

Query parse_filter(const std::string& text, std::ostream& err) {
  try {
    return parse_query(text);
  } catch (const QueryError& e) {
    err << "xman: " << e.what() << "\n  " << text << "\n  " << std::string(e.position(), ' ') << "^\n";
    throw;
  }
}

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
  for (const auto& w : warnings) err << "xman: warning: " << w << "\n";
}

// ---- subcommands ------------------------------------------------------------------------

int cmd_run(const SettingsArgs& sa, const std::vector<std::string>& args, const CliContext& ctx, std::ostream& out) {
  if (args.empty()) throw UsageError("run needs a command: xman run [options] -- <command> [overrides...]");
  const fs::path project = fs::current_path();
  auto [command, overrides] = split_command_overrides(args);
  if (command.empty()) throw UsageError("run needs a command before the overrides");
  const std::vector<OverrideSpec> specs = parse_overrides(overrides);
  Settings settings = resolve_settings(project, sa.flags(), ctx.env);
  RunPlan plan = expand_plan(load_experiment_defaults(settings), specs);

  LaunchOptions opts;
  opts.project_dir = project;
  opts.prompt = ctx.prompt;
  std::vector<RunRecord> records = launch_multirun(settings, plan, command, opts);

  bool all_complete = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto tuple = plan.runs[i].override_args();
    out << "run " << records[i].id.str() << " [" << join(tuple, " ") << "] " << to_string(records[i].info.status)
        << "\n";
    all_complete = all_complete && records[i].info.status == RunStatus::Complete;
  }
  return all_complete ? 0 : 1;
}

struct SubArgs {
  std::string script;
  std::string backend;
  CLI::Option* backend_opt = nullptr;
  bool dry_run = false;
  bool requeue = false;
  unsigned mock_workers = 1;
  unsigned mock_delay_ms = 0;
};

int cmd_sub(const SettingsArgs& sa, const SubArgs& a, const CliContext& ctx, std::ostream& out, std::ostream& err) {
  const fs::path project = fs::current_path();
  SettingsFlags flags = sa.flags();
  if (a.backend_opt->count()) flags.scheduler = a.backend;
  Settings settings = resolve_settings(project, flags, ctx.env);
  ParsedScript parsed = parse_script(a.script);

  ExpandOptions eo;
  if (settings.scheduler) {
    eo.kind = parse_scheduler_kind(*settings.scheduler);
    if (!eo.kind) throw Error(Errc::InvalidSettings, "unknown scheduler '" + *settings.scheduler + "'");
  }
  eo.dry_run = a.dry_run;
  eo.requeue = a.requeue;
  eo.project_dir = project;
  eo.xman_exe = ctx.xman_exe;

  // A dry run must not commit, snapshot or allocate anything.
  VersionPin pin = a.dry_run ? VersionPin{} : prepare_version_pin(settings, project, ctx.prompt);
  print_warnings(pin.warnings, err);
  JobBundle bundle = expand_to_jobs(settings, parsed, load_experiment_defaults(settings), pin, eo);

  if (a.dry_run) {
    for (const Job& job : bundle.jobs) out << "# ---- run " << job.id.str() << " ----\n" << job.script;
    return 0;
  }

  MockOptions mock;
  mock.workers = std::max(1u, a.mock_workers);
  mock.delay = std::chrono::milliseconds(a.mock_delay_ms);
  std::unique_ptr<Backend> backend = make_backend(bundle.kind, mock);
  std::vector<Submission> subs = submit(bundle, *backend);
  bool ok = true;
  for (const auto& s : subs) {
    if (s.job_id) {
      out << "run " << s.id.str() << " job " << *s.job_id << "\n";
    } else {
      out << "run " << s.id.str() << " FAILED " << s.error << "\n";
      ok = false;
    }
  }
  out << std::flush;
  if (auto* m = dynamic_cast<MockBackend*>(backend.get())) m->wait_idle();
  return ok ? 0 : 1;
}

int cmd_exec(std::uint64_t run_id, const std::string& logs, bool requeue, const std::vector<std::string>& argv,
             std::ostream& out) {
  if (argv.empty()) throw UsageError("exec needs a command after --");
  RunRecord record = open_run(logs, RunId{run_id});
  LaunchOptions opts;
  opts.requeue = requeue;
  record = execute_run(std::move(record), argv, opts);
  out << "run " << record.id.str() << " " << to_string(record.info.status) << "\n";
  return record.info.status == RunStatus::Complete ? 0 : 1;
}

int cmd_log(const std::string& log_name, bool log_name_given, const std::string& text, const CliContext& ctx) {
  auto run_dir = ctx.env("XMAN_RUN_DIR");
  if (!run_dir || run_dir->empty()) throw UsageError("XMAN_RUN_DIR is not set; 'xman log' runs inside a run");
  auto obj = nlohmann::ordered_json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) throw UsageError("expected a JSON object, got '" + text + "'");

  MetricLine line;
  if (log_name_given) {
    line.log_name = log_name;
  } else if (auto d = ctx.env("XMAN_LOG_NAME_DEFAULT"); d && !d->empty()) {
    line.log_name = *d;
  }
  for (const auto& [key, value] : obj.items()) {
    if (value.is_number_integer() && !(value.is_number_unsigned() && value.get<std::uint64_t>() > INT64_MAX))
      line.entry.emplace_back(key, MetricValue{value.get<std::int64_t>()});
    else if (value.is_number())
      line.entry.emplace_back(key, MetricValue{value.get<double>()});
    else
      throw UsageError("metric '" + key + "' is not a number");
  }
  RunRecord record = open_run_dir(*run_dir);
  log_metrics(record, line);
  return 0;
}

struct QueryArgs {
  std::string filter;
  std::vector<std::string> group_by;
  std::vector<std::string> avg_std;
  std::string format = "table";
  bool strict = false;
};

fs::path logs_root_for(const SettingsArgs& sa, const CliContext& ctx) {
  return resolve_settings(fs::current_path(), sa.flags(), ctx.env).logs_root;
}

int cmd_query(const SettingsArgs& sa, const QueryArgs& a, const CliContext& ctx, std::ostream& out,
              std::ostream& err) {
  const OutputFormat format = output_format(a.format);
  const Query q = parse_filter(a.filter, err);
  RunIndex index = build_index(logs_root_for(sa, ctx));
  if (!index.quarantine().empty()) write_quarantine(err, index);
  ResultFrame frame = filter(index, q, a.strict ? MatchMode::Strict : MatchMode::Lenient);
  if (a.group_by.empty() && a.avg_std.empty()) {
    write_frame(out, frame, format);
    return 0;
  }
  std::vector<AggregationMap> maps;
  for (const auto& c : a.avg_std) maps.push_back({c, AggregationKind::AvgStd});
  write_aggregate(out, aggregate(group_by(frame, a.group_by), maps), format);
  return 0;
}

int cmd_diff(const SettingsArgs& sa, const QueryArgs& a, const CliContext& ctx, std::ostream& out,
             std::ostream& err) {
  const OutputFormat format = output_format(a.format);
  const Query q = parse_filter(a.filter, err);
  RunIndex index = build_index(logs_root_for(sa, ctx));
  if (!index.quarantine().empty()) write_quarantine(err, index);
  write_diff(out, diff(filter(index, q)), format);
  return 0;
}

int cmd_status(const SettingsArgs& sa, const CliContext& ctx, std::ostream& out) {
  const fs::path logs = logs_root_for(sa, ctx);
  std::error_code ec;
  if (!fs::is_directory(logs, ec)) throw Error(Errc::MissingLogsRoot, "logs root '" + logs.string() + "' does not exist");
  std::vector<std::vector<std::string>> rows = {{"run_id", "status", "exit_code", "job_id", "hostname", "command"}};
  for (RunId id : list_runs(logs)) {
    try {
      RunInfo info = read_info(run_directory(logs, id));
      rows.push_back({id.str(), std::string(to_string(info.status)),
                      info.exit_code ? std::to_string(*info.exit_code) : "", info.scheduler_job_id.value_or(""),
                      info.hostname, info.command});
    } catch (const Error& e) {
      rows.push_back({id.str(), "?", "", "", "", e.what()});
    }
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      line += r[c];
      if (c + 1 < r.size()) line += std::string(width[c] - r[c].size() + 2, ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  return 0;
}

int cmd_purge(const SettingsArgs& sa, const CliContext& ctx, std::ostream& out) {
  Settings settings = resolve_settings(fs::current_path(), sa.flags(), ctx.env);
  auto removed = purge_snapshots(settings);
  for (const auto& h : removed) out << "removed " << h << "\n";
  out << removed.size() << " snapshot(s) removed\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const CliContext& ctx) {
  CLI::App app{"Configure, launch, submit, version and query computational experiments.", "xman"};
  app.require_subcommand(1);

  SettingsArgs run_settings, sub_settings, query_settings, diff_settings, status_settings, purge_settings;
  std::vector<std::string> run_args;
  CLI::App* run = app.add_subcommand("run", "Run a command once per override tuple, in order");
  run_settings.attach(run, true);
  run->add_option("command", run_args, "-- <command> [path=v1,v2 ...]");

  SubArgs sub_args;
  CLI::App* sub = app.add_subcommand("sub", "Submit one scheduler job per override tuple of a script");
  sub_settings.attach(sub, true);
  sub->add_option("script", sub_args.script, "Submission script")->required();
  sub_args.backend_opt = sub->add_option("--backend", sub_args.backend, "Scheduler to submit to (slurm, oar, ..., mock)");
  sub->add_flag("--dry-run", sub_args.dry_run, "Print the job scripts without allocating or submitting");
  sub->add_flag("--requeue", sub_args.requeue, "Let jobs restart runs that are already RUNNING");
  sub->add_option("--mock-workers", sub_args.mock_workers, "Parallel jobs of the local mock scheduler")
      ->check(CLI::PositiveNumber);
  sub->add_option("--mock-delay-ms", sub_args.mock_delay_ms, "Queueing delay of the local mock scheduler");

  std::uint64_t exec_id = 0;
  std::string exec_logs;
  bool exec_requeue = false;
  std::vector<std::string> exec_args;
  CLI::App* exec = app.add_subcommand("exec", "Execute one pre-created run (used by generated job scripts)");
  exec->add_option("--run-id", exec_id, "Run id")->required();
  exec->add_option("--logs", exec_logs, "Logs root")->required();
  exec->add_flag("--requeue", exec_requeue, "Allow restarting a RUNNING run");
  exec->add_option("command", exec_args, "-- <command...>");

  std::string log_name, log_json;
  CLI::App* log = app.add_subcommand("log", "Append one metrics line to the current run");
  CLI::Option* log_name_opt = log->add_option("--log-name", log_name, "Log file name (default: train)");
  log->add_option("json", log_json, "JSON object of numeric values")->required();

  QueryArgs query_args;
  CLI::App* query = app.add_subcommand("query", "Filter, group and aggregate runs");
  query_settings.attach(query, false);
  query->add_option("--filter", query_args.filter, "Query, e.g. \"info.status == 'COMPLETE'\"");
  query->add_option("--group-by", query_args.group_by, "Metadata columns to group by")->delimiter(',');
  query->add_option("--avg-std", query_args.avg_std, "Columns to average per group")->delimiter(',');
  query->add_option("--format", query_args.format, "csv, json or table")->check(CLI::IsMember({"csv", "json", "table"}));
  query->add_flag("--strict", query_args.strict, "Reject unknown keys, type mismatches and corrupt metrics");

  QueryArgs diff_args;
  CLI::App* diff_cmd = app.add_subcommand("diff", "Show config keys that differ between runs");
  diff_settings.attach(diff_cmd, false);
  diff_cmd->add_option("--filter", diff_args.filter, "Query selecting the runs");
  diff_cmd->add_option("--format", diff_args.format, "csv, json or table")->check(CLI::IsMember({"csv", "json", "table"}));

  CLI::App* status = app.add_subcommand("status", "List runs and their states");
  status_settings.attach(status, false);

  CLI::App* purge = app.add_subcommand("purge-snapshots", "Delete snapshots no pending run refers to");
  purge_settings.attach(purge, true);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_settings, run_args, ctx, out);
    if (sub->parsed()) return cmd_sub(sub_settings, sub_args, ctx, out, err);
    if (exec->parsed()) return cmd_exec(exec_id, exec_logs, exec_requeue, exec_args, out);
    if (log->parsed()) return cmd_log(log_name, log_name_opt->count() > 0, log_json, ctx);
    if (query->parsed()) return cmd_query(query_settings, query_args, ctx, out, err);
    if (diff_cmd->parsed()) return cmd_diff(diff_settings, diff_args, ctx, out, err);
    if (status->parsed()) return cmd_status(status_settings, ctx, out);
    if (purge->parsed()) return cmd_purge(purge_settings, ctx, out);
  } catch (const QueryError& e) {
    return exit_code_for(e.code());  // already reported with a caret
  } catch (const UsageError& e) {
    err << "xman: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "xman: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "xman: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace xman

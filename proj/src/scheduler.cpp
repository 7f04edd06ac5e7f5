#include "xman/scheduler.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <tuple>

#include "fs_util.hpp"
#include "xman/error.hpp"
#include "xman/runstore.hpp"

namespace xman {

namespace fs = std::filesystem;

namespace {

constexpr std::array<SchedulerTraits, 7> kTraits = {{
    {SchedulerKind::Slurm, "SLURM", "#SLURM", "#SBATCH", "sbatch"},
    {SchedulerKind::Torque, "TORQUE", "#TORQUE", "#PBS", "qsub"},
    {SchedulerKind::Sge, "SGE", "#SGE", "#$", "qsub"},
    {SchedulerKind::Oar, "OAR", "#OAR", "#OAR", "oarsub"},
    {SchedulerKind::Mwm, "MWM", "#MWM", "#MSUB", "msub"},
    {SchedulerKind::Lsf, "LSF", "#LSF", "#BSUB", "bsub"},
    {SchedulerKind::LocalMock, "LOCAL_MOCK", "#LOCAL_MOCK", "#LOCAL_MOCK", ""},
}};

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Odd number of trailing backslashes: the newline is escaped.
bool continues(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && line[line.size() - 1 - n] == '\\') ++n;
  return n % 2 == 1;
}

struct MarkerHit {
  SchedulerKind kind;
  std::string directive;
};

std::optional<MarkerHit> match_marker(std::string_view line) {
  std::optional<MarkerHit> best;
  std::size_t best_len = 0;
  for (const auto& t : kTraits) {
    for (std::string_view m : {t.marker, t.native_prefix}) {
      if (!line.starts_with(m) || m.size() <= best_len) continue;
      std::string_view rest = line.substr(m.size());
      if (!rest.empty() && !std::isspace(static_cast<unsigned char>(rest.front()))) continue;
      best = MarkerHit{t.kind, std::string(trim(rest))};
      best_len = m.size();
    }
  }
  return best;
}

}  // namespace

const SchedulerTraits& traits(SchedulerKind kind) noexcept { return kTraits[static_cast<std::size_t>(kind)]; }

std::optional<SchedulerKind> parse_scheduler_kind(std::string_view name) noexcept {
  std::string u = upper(name);
  if (u == "MOCK") return SchedulerKind::LocalMock;
  for (const auto& t : kTraits)
    if (u == t.name) return t.kind;
  return std::nullopt;
}

ParsedScript parse_script_text(std::string_view text, std::string_view source) {
  std::vector<std::string> lines;
  {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.emplace_back(line);
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
  }

  std::optional<SchedulerKind> kind;
  std::vector<std::string> directives;
  std::vector<std::pair<std::size_t, std::string>> payloads;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (i == 0 && line.starts_with("#!")) continue;
    if (auto hit = match_marker(line)) {
      if (kind && *kind != hit->kind)
        throw Error(Errc::MixedSchedulers, std::string(source) + ":" + std::to_string(i + 1) + ": " +
                                               std::string(traits(hit->kind).name) + " directive in a " +
                                               std::string(traits(*kind).name) + " script");
      kind = hit->kind;
      directives.push_back(std::move(hit->directive));
      continue;
    }
    std::string_view body = trim(line);
    if (body.empty() || body.front() == '#') continue;

    const std::size_t first = i;
    std::string logical(line);
    while (continues(logical)) {
      logical.pop_back();
      if (i + 1 >= lines.size()) break;
      logical += lines[++i];
    }
    if (!is_blank(logical)) payloads.emplace_back(first + 1, std::string(trim(logical)));
  }

  if (!kind) throw Error(Errc::NoDirectives, std::string(source) + ": no scheduler directive lines found");
  if (payloads.empty()) throw Error(Errc::NoPayload, std::string(source) + ": no command to submit");
  if (payloads.size() > 1)
    throw Error(Errc::MultiplePayloads, std::string(source) + ":" + std::to_string(payloads[1].first) +
                                            ": second command line; a submission script holds exactly one");
  return ParsedScript{*kind, std::move(directives), std::move(payloads.front().second)};
}

ParsedScript parse_script(const fs::path& path) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw Error(Errc::IoFailure, "cannot read script '" + path.string() + "'");
  return parse_script_text(detail::read_file(path), path.string());
}

PayloadCommand split_payload(std::string_view payload) {
  std::vector<std::string> words = shell_split(payload);
  if (words.size() >= 2 && fs::path(words[0]).filename() == "xman" && words[1] == "run") {
    words.erase(words.begin(), words.begin() + 2);
    if (!words.empty() && words.front() == "--") {
      words.erase(words.begin());
    } else if (!words.empty() && words.front().starts_with("-")) {
      throw Error(Errc::InvalidSettings, "options of a wrapped 'xman run' are not supported in submission scripts "
                                         "('" + words.front() + "'); use mlxp.yaml or XMAN_* variables");
    }
  }
  PayloadCommand out;
  std::tie(out.command, out.overrides) = split_command_overrides(words);
  if (out.command.empty()) throw Error(Errc::NoPayload, "payload '" + std::string(payload) + "' has no command");
  return out;
}

std::string render_job_script(const JobBundle& bundle, const Job& job) {
  const auto& t = traits(bundle.kind);
  std::string out = "#!/bin/bash\n";
  for (const auto& d : bundle.directives) {
    out += t.native_prefix;
    if (!d.empty()) out += " " + d;
    out += "\n";
  }
  std::vector<std::string> call = {bundle.xman_exe, "exec", "--run-id", job.id.str(), "--logs",
                                   bundle.logs_root.string()};
  if (bundle.requeue) call.push_back("--requeue");
  call.push_back("--");
  call.insert(call.end(), job.argv.begin(), job.argv.end());
  out += "\n" + shell_join(call) + "\n";
  return out;
}

JobBundle expand_to_jobs(const Settings& settings, const ParsedScript& parsed, const ConfigTree& defaults,
                         const VersionPin& pin, const ExpandOptions& options) {
  PayloadCommand payload = split_payload(parsed.payload);
  JobBundle bundle;
  bundle.kind = options.kind.value_or(parsed.kind);
  bundle.directives = parsed.directives;
  bundle.payload = parsed.payload;
  bundle.command = payload.command;
  bundle.plan = expand_plan(defaults, parse_overrides(payload.overrides));
  bundle.logs_root = settings.logs_root;
  bundle.xman_exe = options.xman_exe;
  bundle.requeue = options.requeue;

  const fs::path project =
      fs::absolute(options.project_dir.empty() ? fs::current_path() : options.project_dir).lexically_normal();
  const ConfigTree stored_settings = run_settings_tree(settings, pin);
  std::uint64_t next = options.dry_run ? peek_next_run_id(settings.logs_root).value : 0;

  for (PlannedRun& run : bundle.plan.runs) {
    Job job;
    job.argv = bundle.command;
    for (auto& tok : run.override_args()) job.argv.push_back(std::move(tok));
    if (options.dry_run) {
      job.id = RunId{next++};
    } else {
      job.id = allocate_run_id(settings.logs_root, settings.lock_timeout());
      RunInfo info;
      info.hostname = detail::hostname();
      info.command = shell_join(job.argv);
      info.work_dir = project.string();
      info.commit_hash = pin.commit;
      init_run(settings.logs_root, job.id, run.config, stored_settings, std::move(info));
    }
    run.id = job.id;
    job.script = render_job_script(bundle, job);
    if (!options.dry_run) {
      job.script_path = run_directory(settings.logs_root, job.id) / "metadata" / "script.sh";
      detail::write_file_atomic(job.script_path, job.script);
      ::chmod(job.script_path.c_str(), 0755);
    }
    bundle.jobs.push_back(std::move(job));
  }
  return bundle;
}

// ---- backends -------------------------------------------------------------------

std::string parse_job_id(SchedulerKind kind, std::string_view output) {
  const std::string text(output);
  std::smatch m;
  auto search = [&](const char* pattern) { return std::regex_search(text, m, std::regex(pattern)); };
  switch (kind) {
    case SchedulerKind::Slurm:
      if (search(R"(Submitted batch job (\d+))") || search(R"(^(\d+)(;\S+)?\s*$)")) return m[1];
      break;
    case SchedulerKind::Oar:
      if (search(R"(OAR_JOB_ID=(\d+))")) return m[1];
      break;
    case SchedulerKind::Lsf:
      if (search(R"(Job <(\d+)>)")) return m[1];
      break;
    case SchedulerKind::Sge:
      if (search(R"(Your job(?:-array)? (\d+))")) return m[1];
      break;
    case SchedulerKind::Torque:
    case SchedulerKind::Mwm:
    case SchedulerKind::LocalMock:
      break;
  }
  std::string_view t = trim(output);
  auto nl = t.rfind('\n');
  return std::string(trim(nl == std::string_view::npos ? t : t.substr(nl + 1)));
}

ShellBackend::ShellBackend(SchedulerKind kind, std::optional<std::string> program)
    : kind_(kind), program_(program.value_or(std::string(traits(kind).submit_command))) {
  if (program_.empty())
    throw Error(Errc::BackendUnavailable, std::string(traits(kind).name) + " has no submit command");
}

std::string_view ShellBackend::name() const { return traits(kind_).name; }

std::string ShellBackend::submit(const fs::path& script, const Job& job) {
  std::vector<std::string> argv = {program_};
  ProcessOptions opts;
  opts.capture_stdout = true;
  opts.capture_stderr = true;
  opts.cwd = script.parent_path();
  if (kind_ == SchedulerKind::Lsf) {
    opts.stdin_data = job.script.empty() ? detail::read_file(script) : job.script;
  } else {
    if (kind_ == SchedulerKind::Oar) argv.push_back("-S");
    argv.push_back(script.string());
  }
  ProcessResult r;
  try {
    r = run_process(argv, opts);
  } catch (const SpawnError& e) {
    throw Error(Errc::BackendUnavailable, std::string("'") + program_ + "' cannot be run: " + e.what());
  }
  if (!r.ok())
    throw Error(Errc::SubmitCommandFailed, "'" + program_ + "' exited with status " + std::to_string(r.status()) +
                                               ": " + std::string(trim(r.err.empty() ? r.out : r.err)));
  std::string id = parse_job_id(kind_, r.out);
  if (id.empty()) throw Error(Errc::SubmitCommandFailed, "'" + program_ + "' printed no job id");
  return id;
}

MockBackend::MockBackend(MockOptions options) : options_(options) {
  const unsigned n = std::max(1u, options_.workers);
  for (unsigned i = 0; i < n; ++i) workers_.emplace_back([this] { work(); });
}

MockBackend::~MockBackend() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) w.join();
}

std::string MockBackend::submit(const fs::path& script, const Job&) { return submit_script(script); }

std::string MockBackend::submit_script(const fs::path& script) {
  std::string id;
  {
    std::lock_guard lock(mu_);
    if (stopping_) throw Error(Errc::BackendUnavailable, "mock backend is shutting down");
    id = "mock-" + std::to_string(++submitted_);
    queue_.push_back(Pending{id, fs::absolute(script), options_.hold});
  }
  cv_.notify_all();
  return id;
}

void MockBackend::release(const std::string& job_id) {
  {
    std::lock_guard lock(mu_);
    for (auto& p : queue_)
      if (p.job_id == job_id) p.held = false;
  }
  cv_.notify_all();
}

void MockBackend::release_all() {
  {
    std::lock_guard lock(mu_);
    options_.hold = false;
    for (auto& p : queue_) p.held = false;
  }
  cv_.notify_all();
}

void MockBackend::wait_idle() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return queue_.empty() && running_ == 0; });
}

std::size_t MockBackend::submission_count() const {
  std::lock_guard lock(mu_);
  return submitted_;
}

std::vector<MockBackend::Finished> MockBackend::finished() const {
  std::lock_guard lock(mu_);
  return finished_;
}

void MockBackend::work() {
  std::unique_lock lock(mu_);
  for (;;) {
    // Only the head of the queue may start, so jobs begin in submission order.
    cv_.wait(lock, [&] { return stopping_ || (!queue_.empty() && !queue_.front().held); });
    if (stopping_) return;
    Pending job = std::move(queue_.front());
    queue_.pop_front();
    ++running_;
    lock.unlock();
    cv_.notify_all();

    if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);
    ProcessOptions opts;
    opts.cwd = job.script.parent_path();
    opts.capture_stdout = options_.capture_output;
    opts.capture_stderr = options_.capture_output;
    ProcessResult result;
    try {
      std::vector<std::string> argv = {"bash", job.script.string()};
      result = run_process(argv, opts);
    } catch (const Error& e) {
      result.exit_code = 127;
      result.err = e.what();
    }

    lock.lock();
    finished_.push_back(Finished{job.job_id, std::move(result)});
    --running_;
    cv_.notify_all();
  }
}

std::unique_ptr<Backend> make_backend(SchedulerKind kind, const MockOptions& mock) {
  if (kind == SchedulerKind::LocalMock) return std::make_unique<MockBackend>(mock);
  return std::make_unique<ShellBackend>(kind);
}

std::vector<Submission> submit(const JobBundle& bundle, Backend& backend) {
  std::vector<Submission> out;
  out.reserve(bundle.jobs.size());
  for (const Job& job : bundle.jobs) {
    if (job.script_path.empty())
      throw Error(Errc::InvalidSettings, "run " + job.id.str() + " has no stored script (dry-run bundle?)");
    const fs::path run_dir = run_directory(bundle.logs_root, job.id);
    Submission s{job.id, std::nullopt, {}};
    try {
      std::string job_id = backend.submit(job.script_path, job);
      modify_info(run_dir, [&](RunInfo& info) { info.scheduler_job_id = job_id; });
      s.job_id = std::move(job_id);
    } catch (const Error& e) {
      if (e.code() != Errc::SubmitCommandFailed) throw;
      RunRecord record = open_run_dir(run_dir);
      update_status(record, RunStatus::Failed);
      s.error = e.what();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace xman

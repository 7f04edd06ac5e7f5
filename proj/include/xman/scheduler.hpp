#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "xman/config.hpp"
#include "xman/launcher.hpp"
#include "xman/process.hpp"
#include "xman/run_id.hpp"

namespace xman {

enum class SchedulerKind { Slurm, Torque, Sge, Oar, Mwm, Lsf, LocalMock };

struct SchedulerTraits {
  SchedulerKind kind;
  std::string_view name;            // SLURM, OAR, ...
  std::string_view marker;          // recognized in input scripts
  std::string_view native_prefix;   // emitted in generated scripts
  std::string_view submit_command;  // empty for LOCAL_MOCK
};

const SchedulerTraits& traits(SchedulerKind kind) noexcept;
/// Case-insensitive; also accepts `mock` for LOCAL_MOCK.
std::optional<SchedulerKind> parse_scheduler_kind(std::string_view name) noexcept;

struct ParsedScript {
  SchedulerKind kind;
  std::vector<std::string> directives;  // text after the marker
  std::string payload;                  // one logical line
};

ParsedScript parse_script_text(std::string_view text, std::string_view source = "<script>");
ParsedScript parse_script(const std::filesystem::path& path);

/// Payload split into the command and its trailing override tokens. A leading
/// `xman run [--] ...` wrapper is removed so each job runs the bare command.
struct PayloadCommand {
  std::vector<std::string> command;
  std::vector<std::string> overrides;
};
PayloadCommand split_payload(std::string_view payload);

struct Job {
  RunId id;
  std::vector<std::string> argv;  // command plus this job's single-valued tuple
  std::string script;
  std::filesystem::path script_path;  // empty for dry runs
};

struct JobBundle {
  SchedulerKind kind;
  std::vector<std::string> directives;
  std::string payload;
  std::vector<std::string> command;
  RunPlan plan;
  std::vector<Job> jobs;
  std::filesystem::path logs_root;
  std::string xman_exe;
  bool requeue = false;
};

struct ExpandOptions {
  std::optional<SchedulerKind> kind;  // overrides the kind detected from the script
  bool dry_run = false;
  bool requeue = false;               // rendered `xman exec` calls get --requeue
  std::filesystem::path project_dir;  // empty: current directory
  std::string xman_exe = "xman";
};

/// Expands the payload sweep and, unless dry-run, pre-creates every run STAGED in
/// plan order and stores its job script at `metadata/script.sh`.
JobBundle expand_to_jobs(const Settings& settings, const ParsedScript& parsed, const ConfigTree& defaults,
                         const VersionPin& pin, const ExpandOptions& options = {});

std::string render_job_script(const JobBundle& bundle, const Job& job);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string_view name() const = 0;
  /// Returns the scheduler's job id. Throws SubmitCommandFailed or BackendUnavailable.
  virtual std::string submit(const std::filesystem::path& script, const Job& job) = 0;
};

/// Shells out to the real submit command (sbatch, oarsub, ...).
class ShellBackend : public Backend {
 public:
  explicit ShellBackend(SchedulerKind kind, std::optional<std::string> program = std::nullopt);
  std::string_view name() const override;
  std::string submit(const std::filesystem::path& script, const Job& job) override;

 private:
  SchedulerKind kind_;
  std::string program_;
};

/// Scheduler job id as printed by the submit command of `kind`.
std::string parse_job_id(SchedulerKind kind, std::string_view output);

struct MockOptions {
  unsigned workers = 1;
  std::chrono::milliseconds delay{0};
  bool hold = false;  // jobs wait for release() before starting
  bool capture_output = true;
};

/// In-process stand-in for a busy cluster: jobs start in submission order on
/// background workers, each behind a hold latch and an artificial delay.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockOptions options = {});
  ~MockBackend() override;
  MockBackend(const MockBackend&) = delete;
  MockBackend& operator=(const MockBackend&) = delete;

  std::string_view name() const override { return "LOCAL_MOCK"; }
  std::string submit(const std::filesystem::path& script, const Job& job) override;
  /// Submits a script that is not part of a bundle (e.g. the raw submission script).
  std::string submit_script(const std::filesystem::path& script);

  void release(const std::string& job_id);
  void release_all();
  void wait_idle();
  std::size_t submission_count() const;

  struct Finished {
    std::string job_id;
    ProcessResult result;
  };
  std::vector<Finished> finished() const;

 private:
  struct Pending {
    std::string job_id;
    std::filesystem::path script;
    bool held;
  };
  void work();

  MockOptions options_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Pending> queue_;
  std::vector<Finished> finished_;
  std::size_t submitted_ = 0;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

struct Submission {
  RunId id;
  std::optional<std::string> job_id;
  std::string error;  // set when the submission failed
};

/// One submission per job in plan order; job ids go into each run's info.yaml.
/// A failed submission marks that run FAILED and the rest proceed.
std::vector<Submission> submit(const JobBundle& bundle, Backend& backend);

/// Backend for `kind`, honoring a `--backend`/settings override.
std::unique_ptr<Backend> make_backend(SchedulerKind kind, const MockOptions& mock = {});

}  // namespace xman

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace xman {

struct RepoState {
  std::filesystem::path repo_root;
  std::string head_commit;  // empty for a repository without commits
  std::vector<std::string> untracked;
  std::vector<std::string> uncommitted;

  bool clean() const noexcept { return untracked.empty() && uncommitted.empty(); }
};

/// Runs `git status` in `path`. Throws NotARepository or VcsToolMissing.
RepoState inspect_repo(const std::filesystem::path& path);

/// Drops entries under any of `excluded` (e.g. the logs root living inside the repo).
RepoState without_paths(RepoState state, const std::vector<std::filesystem::path>& excluded);

enum class SyncPolicy { Prompt, AutoCommit, Ignore, Fail };

std::optional<SyncPolicy> parse_sync_policy(std::string_view name) noexcept;
std::string_view to_string(SyncPolicy policy) noexcept;

/// Terminal used by SyncPolicy::Prompt. A null `in` or `interactive == false` means no TTY.
struct PromptIo {
  std::istream* in = nullptr;
  std::ostream* out = nullptr;
  bool interactive = false;

  static PromptIo from_stdio();
};

struct SyncResult {
  std::string commit;
  bool committed = false;
  std::vector<std::string> warnings;
};

/// Makes sure jobs are pinned to a known commit; see SyncPolicy.
SyncResult interactive_sync(const RepoState& state, SyncPolicy policy, const PromptIo& io = {});

struct Snapshot {
  std::string commit_hash;
  std::filesystem::path path;
};

/// Observer called once per actual materialization (tests count copies with it).
using MaterializeHook = std::function<void(const std::string& commit_hash)>;

/// Returns `<snapshot_root>/<full-hash>/`, exporting the committed tree if absent.
/// Safe across processes: per-hash lock, `.complete` marker written last.
Snapshot ensure_snapshot(const std::filesystem::path& repo_root, const std::string& commit,
                         const std::filesystem::path& snapshot_root, const MaterializeHook& hook = {});

/// Where a job should run from.
struct JobPin {
  bool versioning_enabled = false;
  std::optional<std::string> commit_hash;
  std::filesystem::path live_dir;        // working directory in the live checkout
  std::filesystem::path snapshot_root;
  std::filesystem::path relative_dir;    // live_dir relative to the repository root
};

/// Snapshot directory (plus `relative_dir`) when pinned, else `live_dir`.
/// Throws SnapshotMissing instead of ever falling back to the live tree.
std::filesystem::path resolve_job_workdir(const JobPin& pin);

/// Snapshot directories present under `snapshot_root`.
std::vector<std::string> list_snapshots(const std::filesystem::path& snapshot_root);

/// Deletes every snapshot whose hash is not in `keep`; returns the deleted hashes.
std::vector<std::string> remove_snapshots_except(const std::filesystem::path& snapshot_root,
                                                 const std::set<std::string>& keep);

}  // namespace xman

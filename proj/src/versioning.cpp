#include "xman/versioning.hpp"

#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <iostream>

#include "fs_util.hpp"
#include "xman/error.hpp"
#include "xman/process.hpp"

namespace xman {

namespace fs = std::filesystem;

namespace {

ProcessResult git(const fs::path& repo, std::vector<std::string> args) {
  std::vector<std::string> argv = {"git", "-C", repo.string()};
  argv.insert(argv.end(), std::make_move_iterator(args.begin()), std::make_move_iterator(args.end()));
  ProcessOptions opts;
  opts.capture_stdout = true;
  opts.capture_stderr = true;
  opts.env = {{"GIT_TERMINAL_PROMPT", "0"}, {"LC_ALL", "C"}};
  try {
    return run_process(argv, opts);
  } catch (const SpawnError& e) {
    if (e.os_error() == ENOENT) throw Error(Errc::VcsToolMissing, "git is not on PATH");
    throw;
  }
}

std::string trimmed(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

std::string resolve_commit(const fs::path& repo, const std::string& commit) {
  auto r = git(repo, {"rev-parse", "--verify", "-q", commit + "^{commit}"});
  if (!r.ok()) throw Error(Errc::UnknownCommit, "commit '" + commit + "' not found in '" + repo.string() + "'");
  return trimmed(r.out);
}

}  // namespace

RepoState inspect_repo(const fs::path& path) {
  auto top = git(path, {"rev-parse", "--show-toplevel"});
  if (!top.ok()) throw Error(Errc::NotARepository, "'" + path.string() + "' is not inside a git working tree");
  RepoState state;
  state.repo_root = trimmed(top.out);

  auto head = git(state.repo_root, {"rev-parse", "--verify", "-q", "HEAD"});
  if (head.ok()) state.head_commit = trimmed(head.out);

  auto status = git(state.repo_root, {"status", "--porcelain=v1", "-z", "--untracked-files=all"});
  if (!status.ok()) throw Error(Errc::NotARepository, "git status failed: " + status.err);

  std::string_view rest = status.out;
  while (!rest.empty()) {
    auto nul = rest.find('\0');
    std::string_view record = rest.substr(0, nul);
    rest = nul == std::string_view::npos ? std::string_view{} : rest.substr(nul + 1);
    if (record.size() < 4) continue;
    std::string_view xy = record.substr(0, 2);
    std::string path(record.substr(3));
    if (xy == "??") {
      state.untracked.push_back(std::move(path));
    } else {
      state.uncommitted.push_back(std::move(path));
      if (xy[0] == 'R' || xy[0] == 'C') {
        // Rename and copy records carry the source path as a second field.
        auto next = rest.find('\0');
        rest = next == std::string_view::npos ? std::string_view{} : rest.substr(next + 1);
      }
    }
  }
  return state;
}

RepoState without_paths(RepoState state, const std::vector<fs::path>& excluded) {
  std::error_code ec;
  fs::path root = fs::weakly_canonical(state.repo_root, ec);
  std::vector<std::string> prefixes;
  for (const auto& p : excluded) {
    fs::path rel = fs::weakly_canonical(p, ec).lexically_relative(root);
    if (rel.empty() || *rel.begin() == "..") continue;
    prefixes.push_back(rel.generic_string());
  }
  auto drop = [&](const std::string& path) {
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const std::string& pre) {
      return path == pre || (path.size() > pre.size() && path.starts_with(pre) && path[pre.size()] == '/');
    });
  };
  std::erase_if(state.untracked, drop);
  std::erase_if(state.uncommitted, drop);
  return state;
}

std::optional<SyncPolicy> parse_sync_policy(std::string_view name) noexcept {
  if (name == "prompt") return SyncPolicy::Prompt;
  if (name == "auto_commit") return SyncPolicy::AutoCommit;
  if (name == "ignore") return SyncPolicy::Ignore;
  if (name == "fail") return SyncPolicy::Fail;
  return std::nullopt;
}

std::string_view to_string(SyncPolicy policy) noexcept {
  switch (policy) {
    case SyncPolicy::Prompt: return "prompt";
    case SyncPolicy::AutoCommit: return "auto_commit";
    case SyncPolicy::Ignore: return "ignore";
    case SyncPolicy::Fail: return "fail";
  }
  return "prompt";
}

PromptIo PromptIo::from_stdio() { return PromptIo{&std::cin, &std::cerr, ::isatty(STDIN_FILENO) == 1}; }

namespace {

std::string dirty_summary(const RepoState& s) {
  std::string msg = std::to_string(s.untracked.size()) + " untracked and " + std::to_string(s.uncommitted.size()) +
                    " uncommitted file(s) in '" + s.repo_root.string() + "'";
  std::size_t shown = 0;
  for (const auto* list : {&s.untracked, &s.uncommitted}) {
    for (const auto& p : *list) {
      if (shown++ == 5) return msg + ", ...";
      msg += (shown == 1 ? ": " : ", ") + p;
    }
  }
  return msg;
}

SyncResult auto_commit(const RepoState& state) {
  std::vector<std::string> add = {"add", "-A", "--"};
  add.insert(add.end(), state.untracked.begin(), state.untracked.end());
  add.insert(add.end(), state.uncommitted.begin(), state.uncommitted.end());
  auto staged = git(state.repo_root, add);
  if (!staged.ok()) throw Error(Errc::CommitFailed, "git add failed: " + trimmed(staged.err));
  auto commit = git(state.repo_root, {"commit", "-q", "-m", "xman auto-commit " + detail::utc_timestamp()});
  if (!commit.ok()) throw Error(Errc::CommitFailed, "git commit failed: " + trimmed(commit.err + commit.out));
  auto head = git(state.repo_root, {"rev-parse", "HEAD"});
  if (!head.ok()) throw Error(Errc::CommitFailed, "cannot read new HEAD");
  return SyncResult{trimmed(head.out), true, {}};
}

}  // namespace

SyncResult interactive_sync(const RepoState& state, SyncPolicy policy, const PromptIo& io) {
  if (state.clean()) return SyncResult{state.head_commit, false, {}};
  switch (policy) {
    case SyncPolicy::AutoCommit:
      return auto_commit(state);
    case SyncPolicy::Ignore:
      return SyncResult{state.head_commit, false, {"running with uncommitted work: " + dirty_summary(state)}};
    case SyncPolicy::Fail:
      throw Error(Errc::DirtyRepository, dirty_summary(state));
    case SyncPolicy::Prompt:
      break;
  }
  if (!io.interactive || !io.in || !io.out)
    throw Error(Errc::DirtyRepository, dirty_summary(state) + " (no terminal to ask)");
  *io.out << dirty_summary(state) << "\n"
          << "Add them all and create an automatic commit? [y]es / [i]gnore / [N]o, abort: " << std::flush;
  std::string answer;
  std::getline(*io.in, answer);
  if (answer == "y" || answer == "Y" || answer == "yes") return auto_commit(state);
  if (answer == "i" || answer == "I" || answer == "ignore")
    return SyncResult{state.head_commit, false, {"running with uncommitted work: " + dirty_summary(state)}};
  throw Error(Errc::DirtyRepository, dirty_summary(state) + " (declined)");
}

Snapshot ensure_snapshot(const fs::path& repo_root, const std::string& commit, const fs::path& snapshot_root,
                         const MaterializeHook& hook) {
  const std::string full = resolve_commit(repo_root, commit);
  const fs::path dir = snapshot_root / full;
  std::error_code ec;
  if (fs::exists(dir / ".complete", ec)) return Snapshot{full, dir};

  fs::create_directories(snapshot_root, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create '" + snapshot_root.string() + "': " + ec.message());
  detail::FileLock lock(snapshot_root / ("." + full + ".lock"), std::chrono::minutes(10));
  if (fs::exists(dir / ".complete", ec)) return Snapshot{full, dir};
  fs::remove_all(dir, ec);

  const std::string tag = full + "-" + std::to_string(::getpid());
  const fs::path staging = snapshot_root / (".tmp-" + tag);
  const fs::path tarball = snapshot_root / (".tmp-" + tag + ".tar");
  fs::remove_all(staging, ec);
  fs::create_directories(staging, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create '" + staging.string() + "'");

  auto cleanup = [&] {
    std::error_code ignored;
    fs::remove(tarball, ignored);
    fs::remove_all(staging, ignored);
  };
  auto archived = git(repo_root, {"archive", "--format=tar", "-o", tarball.string(), full});
  if (!archived.ok()) {
    cleanup();
    throw Error(Errc::IoFailure, "git archive failed: " + trimmed(archived.err));
  }
  std::vector<std::string> untar = {"tar", "-xf", tarball.string(), "-C", staging.string()};
  ProcessOptions quiet;
  quiet.capture_stderr = true;
  auto extracted = run_process(untar, quiet);
  if (!extracted.ok()) {
    cleanup();
    throw Error(Errc::IoFailure, "tar failed: " + trimmed(extracted.err));
  }
  fs::remove(tarball, ec);
  detail::write_file_atomic(staging / ".complete", full + "\n");
  fs::rename(staging, dir, ec);
  if (ec) {
    cleanup();
    throw Error(Errc::IoFailure, "cannot publish snapshot '" + dir.string() + "': " + ec.message());
  }
  if (hook) hook(full);
  return Snapshot{full, dir};
}

fs::path resolve_job_workdir(const JobPin& pin) {
  if (!pin.versioning_enabled || !pin.commit_hash) return pin.live_dir;
  fs::path snap = pin.snapshot_root / *pin.commit_hash;
  std::error_code ec;
  if (!fs::exists(snap / ".complete", ec))
    throw Error(Errc::SnapshotMissing, "snapshot for commit " + *pin.commit_hash + " not found under '" +
                                           pin.snapshot_root.string() + "'");
  fs::path dir = pin.relative_dir.empty() || pin.relative_dir == "." ? snap : snap / pin.relative_dir;
  return dir.lexically_normal();
}

std::vector<std::string> list_snapshots(const fs::path& snapshot_root) {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(snapshot_root, ec)) {
    std::string name = entry.path().filename().string();
    if (name.empty() || name[0] == '.' || !entry.is_directory(ec)) continue;
    if (fs::exists(entry.path() / ".complete", ec)) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> remove_snapshots_except(const fs::path& snapshot_root, const std::set<std::string>& keep) {
  std::vector<std::string> removed;
  for (const auto& hash : list_snapshots(snapshot_root)) {
    if (keep.count(hash)) continue;
    detail::FileLock lock(snapshot_root / ("." + hash + ".lock"), std::chrono::minutes(10));
    std::error_code ec;
    const fs::path doomed = snapshot_root / (".purge-" + hash);
    fs::rename(snapshot_root / hash, doomed, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot remove snapshot '" + hash + "': " + ec.message());
    fs::remove_all(doomed, ec);
    removed.push_back(hash);
  }
  return removed;
}

}  // namespace xman

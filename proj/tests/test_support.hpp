#pragma once

#include <stdlib.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xman::testing {

namespace fs = std::filesystem;

/// Fresh directory under $TMPDIR, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "xman-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const fs::path& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

inline void write_script(const fs::path& path, std::string_view text) {
  write_text(path, text);
  fs::permissions(path, fs::perms::owner_all | fs::perms::group_read | fs::perms::others_read);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace xman::testing

#include "xman/process.hpp"

namespace xman::testing {

/// Runs git in `repo`, failing loudly on error; returns trimmed stdout.
inline std::string git(const fs::path& repo, std::vector<std::string> args) {
  std::vector<std::string> argv = {"git", "-C", repo.string()};
  argv.insert(argv.end(), args.begin(), args.end());
  ProcessOptions opts;
  opts.capture_stdout = true;
  opts.capture_stderr = true;
  auto r = run_process(argv, opts);
  if (!r.ok()) throw std::runtime_error("git " + args.front() + " failed: " + r.err);
  while (!r.out.empty() && r.out.back() == '\n') r.out.pop_back();
  return r.out;
}

/// Fresh repository with a local identity and one commit containing `files`.
inline std::string init_repo(const fs::path& repo, const std::vector<std::pair<std::string, std::string>>& files) {
  fs::create_directories(repo);
  git(repo, {"init", "-q"});
  git(repo, {"config", "user.email", "dev@example.org"});
  git(repo, {"config", "user.name", "Dev"});
  git(repo, {"config", "commit.gpgsign", "false"});
  for (const auto& [name, text] : files) write_text(repo / name, text);
  git(repo, {"add", "-A"});
  git(repo, {"commit", "-q", "-m", "initial"});
  return git(repo, {"rev-parse", "HEAD"});
}

inline std::string commit_file(const fs::path& repo, const std::string& name, const std::string& text) {
  write_text(repo / name, text);
  git(repo, {"add", "-A"});
  git(repo, {"commit", "-q", "-m", "update " + name});
  return git(repo, {"rev-parse", "HEAD"});
}

}  // namespace xman::testing

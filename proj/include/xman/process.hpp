#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xman/error.hpp"

namespace xman {

struct ProcessOptions {
  std::filesystem::path cwd;  // empty: inherit
  std::vector<std::pair<std::string, std::string>> env;  // added on top of the parent environment
  bool capture_stdout = false;
  bool capture_stderr = false;
  std::optional<std::string> stdin_data;  // nullopt: inherit stdin
  // Relay SIGINT/SIGTERM/SIGHUP received while waiting to the child.
  bool forward_signals = false;
};

struct ProcessResult {
  int exit_code = 0;       // valid when !signaled
  int signal = 0;          // valid when signaled
  bool signaled = false;
  std::string out;
  std::string err;

  /// Shell convention: exit code, or 128 + signal number.
  int status() const noexcept { return signaled ? 128 + signal : exit_code; }
  bool ok() const noexcept { return !signaled && exit_code == 0; }
};

/// Raised when the program cannot be started at all (exec failure).
class SpawnError : public Error {
 public:
  SpawnError(const std::string& program, int err);
  int os_error() const noexcept { return os_error_; }

 private:
  int os_error_;
};

ProcessResult run_process(std::span<const std::string> argv, const ProcessOptions& options = {});

/// POSIX shell single-quoting when needed.
std::string shell_quote(std::string_view word);
std::string shell_join(std::span<const std::string> words);

/// Word splitting with POSIX quote and backslash rules (no expansions).
std::vector<std::string> shell_split(std::string_view line);

}  // namespace xman

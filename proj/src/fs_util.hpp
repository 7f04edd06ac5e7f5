#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace xman::detail {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);

/// Writes to a sibling temp file and renames over `path`.
void write_file_atomic(const fs::path& path, std::string_view content);

/// Appends `line` with one write(2) call so a killed writer leaves whole lines.
void append_line(const fs::path& path, std::string_view line);

/// Exclusive advisory flock(2) on `path`, polled until `timeout` elapses.
class FileLock {
 public:
  FileLock(const fs::path& path, std::chrono::milliseconds timeout);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string utc_timestamp();
std::string hostname();

/// Single path component: non-empty, not `.`/`..`, no `/` or NUL.
bool is_path_component(std::string_view name) noexcept;

}  // namespace xman::detail

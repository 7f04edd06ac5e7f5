#include "xman/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>

extern char** environ;

namespace xman {

SpawnError::SpawnError(const std::string& program, int err)
    : Error(Errc::SpawnFailure, "cannot start '" + program + "': " + std::strerror(err)), os_error_(err) {}

namespace {

std::atomic<pid_t> forwarded_child{0};

extern "C" void relay_signal(int sig) {
  pid_t pid = forwarded_child.load();
  if (pid > 0) ::kill(pid, sig);
}

class SignalRelay {
 public:
  explicit SignalRelay(pid_t child) {
    forwarded_child = child;
    struct sigaction sa {};
    sa.sa_handler = relay_signal;
    sigemptyset(&sa.sa_mask);
    sa.sa_flags = SA_RESTART;
    for (int i = 0; i < 3; ++i) ::sigaction(kSignals[i], &sa, &previous_[i]);
  }
  ~SignalRelay() {
    for (int i = 0; i < 3; ++i) ::sigaction(kSignals[i], &previous_[i], nullptr);
    forwarded_child = 0;
  }

 private:
  static constexpr int kSignals[3] = {SIGINT, SIGTERM, SIGHUP};
  struct sigaction previous_[3];
};

struct Pipe {
  int read = -1;
  int write = -1;
  void open() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(Errc::IoFailure, std::string("pipe: ") + std::strerror(errno));
    read = fds[0];
    write = fds[1];
  }
  static void close_fd(int& fd) {
    if (fd >= 0) ::close(fd);
    fd = -1;
  }
  ~Pipe() {
    close_fd(read);
    close_fd(write);
  }
};

std::vector<std::string> build_environment(const ProcessOptions& options) {
  std::map<std::string, std::string> merged;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    merged[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
  }
  for (const auto& [k, v] : options.env) merged[k] = v;
  std::vector<std::string> out;
  out.reserve(merged.size());
  for (const auto& [k, v] : merged) out.push_back(k + "=" + v);
  return out;
}

}  // namespace

ProcessResult run_process(std::span<const std::string> argv, const ProcessOptions& options) {
  if (argv.empty()) throw Error(Errc::SpawnFailure, "empty command");

  // Everything the child touches is prepared before fork().
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  std::vector<std::string> env_storage = build_environment(options);
  std::vector<char*> cenv;
  for (auto& e : env_storage) cenv.push_back(e.data());
  cenv.push_back(nullptr);
  std::string cwd = options.cwd.string();

  Pipe err_report, out_pipe, err_pipe, in_pipe;
  err_report.open();
  if (options.capture_stdout) out_pipe.open();
  if (options.capture_stderr) err_pipe.open();
  if (options.stdin_data) in_pipe.open();

  pid_t pid = ::fork();
  if (pid < 0) throw Error(Errc::SpawnFailure, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    if (out_pipe.write >= 0) ::dup2(out_pipe.write, STDOUT_FILENO);
    if (err_pipe.write >= 0) ::dup2(err_pipe.write, STDERR_FILENO);
    if (in_pipe.read >= 0) ::dup2(in_pipe.read, STDIN_FILENO);
    int err = 0;
    if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
      err = errno;
    } else {
      ::execvpe(cargv[0], cargv.data(), cenv.data());
      err = errno;
    }
    ssize_t ignored = ::write(err_report.write, &err, sizeof err);
    (void)ignored;
    ::_exit(127);
  }

  std::optional<SignalRelay> relay;
  if (options.forward_signals) relay.emplace(pid);

  Pipe::close_fd(err_report.write);
  Pipe::close_fd(out_pipe.write);
  Pipe::close_fd(err_pipe.write);
  Pipe::close_fd(in_pipe.read);

  int exec_errno = 0;
  ssize_t n;
  do {
    n = ::read(err_report.read, &exec_errno, sizeof exec_errno);
  } while (n < 0 && errno == EINTR);
  bool exec_failed = n == static_cast<ssize_t>(sizeof exec_errno);

  ProcessResult result;
  std::string_view pending_input = options.stdin_data ? std::string_view(*options.stdin_data) : "";
  if (exec_failed || pending_input.empty()) Pipe::close_fd(in_pipe.write);
  if (in_pipe.write >= 0) ::fcntl(in_pipe.write, F_SETFL, O_NONBLOCK);

  while (out_pipe.read >= 0 || err_pipe.read >= 0 || in_pipe.write >= 0) {
    std::vector<pollfd> fds;
    if (out_pipe.read >= 0) fds.push_back({out_pipe.read, POLLIN, 0});
    if (err_pipe.read >= 0) fds.push_back({err_pipe.read, POLLIN, 0});
    if (in_pipe.write >= 0) fds.push_back({in_pipe.write, POLLOUT, 0});
    if (::poll(fds.data(), fds.size(), -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    for (const auto& p : fds) {
      if (!p.revents) continue;
      if (p.fd == in_pipe.write) {
        ssize_t w = ::write(in_pipe.write, pending_input.data(), pending_input.size());
        if (w > 0) pending_input.remove_prefix(static_cast<std::size_t>(w));
        if ((w < 0 && errno != EAGAIN && errno != EINTR) || pending_input.empty())
          Pipe::close_fd(in_pipe.write);
        continue;
      }
      char buf[8192];
      ssize_t r = ::read(p.fd, buf, sizeof buf);
      if (r < 0 && (errno == EINTR || errno == EAGAIN)) continue;
      std::string& sink = p.fd == out_pipe.read ? result.out : result.err;
      if (r <= 0) {
        Pipe::close_fd(p.fd == out_pipe.read ? out_pipe.read : err_pipe.read);
      } else {
        sink.append(buf, static_cast<std::size_t>(r));
      }
    }
  }

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) throw Error(Errc::SpawnFailure, std::string("waitpid: ") + std::strerror(errno));
  }
  if (exec_failed) throw SpawnError(argv[0], exec_errno);

  if (WIFSIGNALED(status)) {
    result.signaled = true;
    result.signal = WTERMSIG(status);
  } else {
    result.exit_code = WEXITSTATUS(status);
  }
  return result;
}

std::string shell_quote(std::string_view word) {
  if (!word.empty() && word.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
                                               "0123456789_-./=:,+@%") == std::string_view::npos)
    return std::string(word);
  std::string out = "'";
  for (char c : word) {
    if (c == '\'') out += "'\"'\"'";
    else out += c;
  }
  out += '\'';
  return out;
}

std::string shell_join(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += shell_quote(w);
  }
  return out;
}

std::vector<std::string> shell_split(std::string_view line) {
  std::vector<std::string> words;
  std::string current;
  bool in_word = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c == '\'') {
      in_word = true;
      auto end = line.find('\'', i + 1);
      if (end == std::string_view::npos) throw Error(Errc::SyntaxError, "unterminated single quote");
      current.append(line.substr(i + 1, end - i - 1));
      i = end;
    } else if (c == '"') {
      in_word = true;
      ++i;
      for (; i < line.size() && line[i] != '"'; ++i) {
        if (line[i] == '\\' && i + 1 < line.size() &&
            std::string_view("$`\"\\\n").find(line[i + 1]) != std::string_view::npos)
          ++i;
        current += line[i];
      }
      if (i >= line.size()) throw Error(Errc::SyntaxError, "unterminated double quote");
    } else if (c == '\\') {
      in_word = true;
      if (i + 1 < line.size()) current += line[++i];
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (in_word) words.push_back(std::move(current));
      current.clear();
      in_word = false;
    } else {
      in_word = true;
      current += c;
    }
  }
  if (in_word) words.push_back(std::move(current));
  return words;
}

}  // namespace xman

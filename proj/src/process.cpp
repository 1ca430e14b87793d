#include "wfrevive/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "wfrevive/errors.hpp"

extern char** environ;

namespace wfr {

namespace {

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (pipe2(fd, O_CLOEXEC) != 0) throw Error(Errc::SandboxSetupFailed, std::string("pipe: ") + std::strerror(errno));
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fd[0] >= 0) ::close(fd[0]);
    fd[0] = -1;
  }
  void close_write() {
    if (fd[1] >= 0) ::close(fd[1]);
    fd[1] = -1;
  }
};

}  // namespace

ProcessResult run_process(const ProcessSpec& spec) {
  if (spec.argv.empty()) throw Error(Errc::SandboxSetupFailed, "empty command line");
  Pipe in, out, err, status;

  std::vector<std::string> env_strings;
  for (const auto& [k, v] : spec.env) env_strings.push_back(k + "=" + v);
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = spec.argv;
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  std::string cwd = spec.cwd.string();

  auto start = std::chrono::steady_clock::now();
  pid_t pid = fork();
  if (pid < 0) throw Error(Errc::SandboxSetupFailed, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    setpgid(0, 0);
    dup2(in.fd[0], 0);
    dup2(out.fd[1], 1);
    dup2(err.fd[1], 2);
    if (!cwd.empty() && chdir(cwd.c_str()) != 0) {
      int e = errno;
      (void)!write(status.fd[1], &e, sizeof e);
      _exit(127);
    }
    execve(argv[0], argv.data(), envp.data());
    int e = errno;
    (void)!write(status.fd[1], &e, sizeof e);
    _exit(127);
  }
  setpgid(pid, pid);
  in.close_read();
  out.close_write();
  err.close_write();
  status.close_write();

  int child_errno = 0;
  if (read(status.fd[0], &child_errno, sizeof child_errno) == sizeof child_errno) {
    waitpid(pid, nullptr, 0);
    throw Error(Errc::SandboxSetupFailed, "cannot start " + spec.argv[0] + ": " + std::strerror(child_errno),
                {spec.argv[0]});
  }

  ProcessResult result;
  std::size_t written = 0;
  if (spec.stdin_data.empty()) in.close_write();
  fcntl(in.fd[1], F_SETFL, O_NONBLOCK);
  auto deadline = start + spec.timeout;
  char buf[65536];
  while (out.fd[0] >= 0 || err.fd[0] >= 0) {
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      kill(-pid, SIGKILL);
      break;
    }
    std::vector<pollfd> fds;
    if (out.fd[0] >= 0) fds.push_back({out.fd[0], POLLIN, 0});
    if (err.fd[0] >= 0) fds.push_back({err.fd[0], POLLIN, 0});
    if (in.fd[1] >= 0) fds.push_back({in.fd[1], POLLOUT, 0});
    auto wait_ms = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    int n = poll(fds.data(), fds.size(), static_cast<int>(std::min<std::int64_t>(wait_ms, 200)));
    if (n < 0 && errno != EINTR) break;
    for (const auto& p : fds) {
      if (!p.revents) continue;
      if (p.fd == in.fd[1]) {
        ssize_t w = write(in.fd[1], spec.stdin_data.data() + written, spec.stdin_data.size() - written);
        if (w > 0) written += static_cast<std::size_t>(w);
        if (w < 0 && errno != EAGAIN) written = spec.stdin_data.size();
        if (written >= spec.stdin_data.size()) in.close_write();
        continue;
      }
      ssize_t r = read(p.fd, buf, sizeof buf);
      if (r > 0) {
        (p.fd == out.fd[0] ? result.out : result.err).append(buf, static_cast<std::size_t>(r));
      } else if (r == 0 || errno != EINTR) {
        if (p.fd == out.fd[0]) {
          out.close_read();
        } else {
          err.close_read();
        }
      }
    }
  }
  in.close_write();
  int wstatus = 0;
  while (waitpid(pid, &wstatus, 0) < 0 && errno == EINTR) {
  }
  // Descendants that kept the group alive are not waited for.
  kill(-pid, SIGKILL);
  result.wall_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(wstatus)) {
    result.exit_code = WEXITSTATUS(wstatus);
  } else if (WIFSIGNALED(wstatus)) {
    result.signal = WTERMSIG(wstatus);
  }
  return result;
}

std::string python_executable() {
  if (const char* p = std::getenv("WFR_PYTHON"); p && *p) return p;
  return WFREVIVE_PYTHON;
}

std::map<std::string, std::string> environment_subset(const std::vector<std::string>& names) {
  std::map<std::string, std::string> env;
  for (const auto& n : names) {
    if (const char* v = std::getenv(n.c_str())) env[n] = v;
  }
  return env;
}

std::optional<std::string> python_syntax_error(std::string_view source) {
  ProcessSpec spec;
  spec.argv = {python_executable(), "-c",
               "import ast, sys\n"
               "try:\n"
               "    ast.parse(sys.stdin.read())\n"
               "except SyntaxError as e:\n"
               "    print('line %s: %s' % (e.lineno, e.msg))\n"
               "    sys.exit(1)\n"};
  spec.env = environment_subset({"PATH", "LANG", "LC_ALL"});
  spec.stdin_data = std::string(source);
  spec.timeout = std::chrono::milliseconds(30000);
  auto r = run_process(spec);
  if (r.exit_code == 0) return std::nullopt;
  auto msg = r.out.empty() ? r.err : r.out;
  while (!msg.empty() && (msg.back() == '\n' || msg.back() == '\r')) msg.pop_back();
  return msg.empty() ? std::string("syntax check failed") : msg;
}

}  // namespace wfr

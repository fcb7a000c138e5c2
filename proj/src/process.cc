#include "fedlite/process.h"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <thread>

#include "fedlite/errors.h"

extern char** environ;

namespace fedlite {
namespace {

using Clock = std::chrono::steady_clock;

int decode_status(int raw) {
  if (WIFEXITED(raw)) return WEXITSTATUS(raw);
  if (WIFSIGNALED(raw)) return 128 + WTERMSIG(raw);
  return -1;
}

// Reads stdout until the first newline or the deadline.
std::optional<std::string> read_line(int fd, Clock::time_point deadline) {
  std::string line;
  char c;
  while (true) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - Clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return std::nullopt;
    const ssize_t n = ::read(fd, &c, 1);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return std::nullopt;  // closed: the child died or closed stdout
    if (c == '\n') return line;
    line.push_back(c);
  }
}

}  // namespace

std::unique_ptr<ChildProcess> ChildProcess::spawn(const ProcessSpec& spec,
                                                  double ready_timeout_s) {
  int out[2];
  if (::pipe2(out, O_CLOEXEC) != 0) {
    throw StartupFailure(spec.name, std::string("pipe: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, out[1], STDOUT_FILENO);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  const std::string log = spec.log_path.empty() ? "/dev/null" : spec.log_path;
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, log.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);

  std::vector<std::string> argv_store{spec.program};
  argv_store.insert(argv_store.end(), spec.args.begin(), spec.args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  argv.push_back(nullptr);

  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, spec.program.c_str(), &actions, nullptr,
                               argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(out[1]);
  if (rc != 0) {
    ::close(out[0]);
    throw StartupFailure(spec.name, "cannot start " + spec.program + ": " +
                                        std::strerror(rc));
  }
  std::unique_ptr<ChildProcess> child(new ChildProcess(spec.name, pid));
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(
                         std::chrono::duration<double>(ready_timeout_s));
  const auto line = read_line(out[0], deadline);
  ::close(out[0]);
  constexpr std::string_view kReady = "READY ";
  if (!line || line->rfind(kReady, 0) != 0 || line->size() == kReady.size()) {
    child->kill();
    const auto status = child->wait_for(5);
    std::string why = line ? "unexpected first line '" + *line + "'"
                           : "no READY line within " + std::to_string(ready_timeout_s) + " s";
    if (status) why += ", exit status " + std::to_string(*status);
    if (!spec.log_path.empty()) why += " (log: " + spec.log_path + ")";
    throw StartupFailure(spec.name, why);
  }
  child->endpoint_ = line->substr(kReady.size());
  return child;
}

ChildProcess::~ChildProcess() {
  if (!try_wait()) {
    kill();
    wait_for(5);
  }
}

std::optional<int> ChildProcess::try_wait() {
  if (status_) return status_;
  int raw = 0;
  const pid_t r = ::waitpid(pid_, &raw, WNOHANG);
  if (r == pid_) status_ = decode_status(raw);
  return status_;
}

std::optional<int> ChildProcess::wait_for(double seconds) {
  const auto deadline = Clock::now() + std::chrono::duration<double>(seconds);
  while (true) {
    if (auto s = try_wait()) return s;
    if (Clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

void ChildProcess::kill() {
  if (!status_) ::kill(pid_, SIGKILL);
}

std::string executable_dir() {
  std::error_code ec;
  const auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) throw IoFailure("cannot resolve /proc/self/exe: " + ec.message());
  return self.parent_path().string();
}

}  // namespace fedlite

#ifndef FEDLITE_PROCESS_H_
#define FEDLITE_PROCESS_H_

#include <sys/types.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fedlite {

struct ProcessSpec {
  std::string name;  // for error messages
  std::string program;
  std::vector<std::string> args;
  std::string log_path;  // stderr goes here; empty means /dev/null
};

// A child that announces itself with a "READY <endpoint>" line on stdout.
class ChildProcess {
 public:
  // Starts the program and waits up to `ready_timeout_s` for the READY
  // line. Throws StartupFailure (and reaps the child) otherwise.
  static std::unique_ptr<ChildProcess> spawn(const ProcessSpec& spec,
                                             double ready_timeout_s);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  const std::string& name() const { return name_; }
  const std::string& endpoint() const { return endpoint_; }
  pid_t pid() const { return pid_; }

  // Exit status once the child is gone: the exit code, or 128 + signal.
  std::optional<int> try_wait();
  std::optional<int> wait_for(double seconds);
  // SIGKILL; the status is collected by the next wait.
  void kill();

 private:
  ChildProcess(std::string name, pid_t pid) : name_(std::move(name)), pid_(pid) {}

  std::string name_;
  pid_t pid_;
  std::string endpoint_;
  std::optional<int> status_;
};

// Directory holding the running executable.
std::string executable_dir();

}  // namespace fedlite

#endif  // FEDLITE_PROCESS_H_

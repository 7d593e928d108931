#include "rollout/child_process.hpp"

#include <limits.h>
#include <signal.h>
#include <unistd.h>

#include <stdexcept>

#include "rollout/errors.hpp"

namespace rollout {

ChildProcess::ChildProcess(std::vector<std::string> argv) {
  sandbox::SpawnOptions opts;
  opts.argv = std::move(argv);
  opts.new_session = true;  // own process group so terminate() sweeps helpers
  pid_ = sandbox::spawn_process(opts);
}

ChildProcess::~ChildProcess() {
  try {
    terminate();
  } catch (...) {
  }
}

ChildProcess::ChildProcess(ChildProcess&& other) noexcept : pid_(other.pid_) {
  other.pid_ = -1;
}

ChildProcess& ChildProcess::operator=(ChildProcess&& other) noexcept {
  if (this != &other) {
    try {
      terminate();
    } catch (...) {
    }
    pid_ = other.pid_;
    other.pid_ = -1;
  }
  return *this;
}

bool ChildProcess::alive() const {
  return pid_ > 0 && sandbox::process_alive(pid_);
}

void ChildProcess::terminate(Duration grace) {
  if (pid_ <= 0) return;
  pid_t pid = pid_;
  pid_ = -1;
  sandbox::kill_process_group(pid, SIGTERM);
  if (!sandbox::wait_exit(pid, grace)) {
    sandbox::kill_process_group(pid, SIGKILL);
    sandbox::wait_exit(pid, std::chrono::seconds{5});
  }
}

std::string self_exe_dir() {
  char buf[PATH_MAX];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) throw Error{"proc_self_exe", "cannot resolve /proc/self/exe"};
  buf[n] = '\0';
  std::string path{buf};
  auto slash = path.rfind('/');
  return slash == std::string::npos ? std::string{"."} : path.substr(0, slash);
}

}  // namespace rollout

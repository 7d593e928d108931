#pragma once

#include <string>
#include <vector>

#include "rollout/clock.hpp"
#include "rollout/sandbox/proc.hpp"

namespace rollout {

// RAII child process for benches and tests that launch server binaries:
// SIGTERM then SIGKILL on destruction, never leaves the child behind.
class ChildProcess {
 public:
  explicit ChildProcess(std::vector<std::string> argv);
  ~ChildProcess();

  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  pid_t pid() const { return pid_; }
  bool alive() const;

  // Graceful stop: SIGTERM, wait up to `grace`, SIGKILL stragglers.
  void terminate(Duration grace = std::chrono::seconds{2});

 private:
  pid_t pid_ = -1;
};

// Directory of the currently running executable (via /proc/self/exe);
// sibling binaries (rollout-server, mock-llm, sandbox-executor) live there.
std::string self_exe_dir();

}  // namespace rollout

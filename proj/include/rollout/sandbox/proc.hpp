#pragma once

#include <sys/types.h>

#include <string>
#include <vector>

#include "rollout/clock.hpp"

namespace rollout::sandbox {

struct SpawnOptions {
  std::vector<std::string> argv;  // argv[0] is the executable path
  std::string workdir;            // empty = inherit
  bool new_session = true;        // setsid() in the child
};

// fork/exec. The child calls setsid() when requested, so the spawned process
// (and everything it forks) lives in its own session — that is what lets
// close() find stragglers later. Throws rollout::Error on fork failure; an
// exec failure surfaces as the child exiting 127.
pid_t spawn_process(const SpawnOptions& opts);

bool process_alive(pid_t pid);

// Signal every process in `pgid`'s group; ESRCH is not an error.
void kill_process_group(pid_t pgid, int sig);

void kill_pid(pid_t pid, int sig);

// Scans /proc for processes whose session id matches. Used to sweep up
// descendants that double-forked out of the executor's process group.
std::vector<pid_t> pids_in_session(pid_t sid);

// Reaps `pid` (a direct child), polling with waitpid(WNOHANG). Returns true
// if it exited within `timeout`.
bool wait_exit(pid_t pid, Duration timeout);

// Binds 127.0.0.1:0, records the assigned port, closes the socket.
int pick_free_port();

}  // namespace rollout::sandbox

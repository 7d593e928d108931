#include "rollout/sandbox/proc.hpp"

#include <arpa/inet.h>
#include <dirent.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "rollout/errors.hpp"

namespace rollout::sandbox {

pid_t spawn_process(const SpawnOptions& opts) {
  if (opts.argv.empty()) throw Error{"spawn", "empty argv"};

  std::vector<char*> argv;
  argv.reserve(opts.argv.size() + 1);
  for (const auto& a : opts.argv) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  pid_t pid = ::fork();
  if (pid < 0) throw Error{"spawn", std::string{"fork failed: "} + std::strerror(errno)};
  if (pid == 0) {
    if (opts.new_session) ::setsid();
    if (!opts.workdir.empty() && ::chdir(opts.workdir.c_str()) != 0) ::_exit(126);
    ::execvp(argv[0], argv.data());
    ::_exit(127);
  }
  return pid;
}

bool process_alive(pid_t pid) {
  if (pid <= 0) return false;
  return ::kill(pid, 0) == 0 || errno == EPERM;
}

void kill_process_group(pid_t pgid, int sig) {
  if (pgid <= 0) return;
  ::kill(-pgid, sig);  // ESRCH fine: already gone
}

void kill_pid(pid_t pid, int sig) {
  if (pid <= 0) return;
  ::kill(pid, sig);
}

std::vector<pid_t> pids_in_session(pid_t sid) {
  std::vector<pid_t> out;
  DIR* dir = ::opendir("/proc");
  if (!dir) return out;
  while (struct dirent* ent = ::readdir(dir)) {
    const char* name = ent->d_name;
    if (!std::isdigit(static_cast<unsigned char>(name[0]))) continue;
    pid_t pid = static_cast<pid_t>(std::atol(name));

    std::ifstream stat{std::string{"/proc/"} + name + "/stat"};
    if (!stat) continue;
    std::string line;
    std::getline(stat, line);
    // Fields: pid (comm) state ppid pgrp session ... — comm may contain
    // spaces, so parse from the last ')'.
    auto close_paren = line.rfind(')');
    if (close_paren == std::string::npos) continue;
    long ppid, pgrp, session;
    char state;
    if (std::sscanf(line.c_str() + close_paren + 1, " %c %ld %ld %ld",
                    &state, &ppid, &pgrp, &session) != 4)
      continue;
    if (state == 'Z' || state == 'X') continue;  // dead, just unreaped
    if (static_cast<pid_t>(session) == sid) out.push_back(pid);
  }
  ::closedir(dir);
  return out;
}

bool wait_exit(pid_t pid, Duration timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    int status = 0;
    pid_t rc = ::waitpid(pid, &status, WNOHANG);
    if (rc == pid) return true;
    if (rc < 0 && errno == ECHILD) return true;  // someone else reaped it
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds{5});
  }
}

int pick_free_port() {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error{"port", "socket() failed"};
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    ::close(fd);
    throw Error{"port", "bind() failed"};
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  int port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

}  // namespace rollout::sandbox

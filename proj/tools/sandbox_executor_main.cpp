// In-sandbox action executor. One instance per simulated runtime: binds a
// unix socket, serves framed JSON action requests from the host, and runs
// bash payloads in their own process group so a timeout can kill the whole
// tree. The host tears us down with SIGTERM (grace) then SIGKILL.

#include <errno.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "rollout/sandbox/action.hpp"
#include "rollout/sandbox/framing.hpp"

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kMaxOutput = 1 << 20;  // 1 MiB per action

// Process group of the action currently executing; the SIGTERM handler
// must be able to cut it down without touching the heap.
volatile pid_t g_action_pgid = -1;
bool g_network_disabled = false;

extern "C" void on_sigterm(int) {
  pid_t pgid = g_action_pgid;
  if (pgid > 0) ::kill(-pgid, SIGKILL);
  ::_exit(0);
}

rollout::sandbox::ActionResult run_bash(const rollout::sandbox::ActionRequest& req) {
  rollout::sandbox::ActionResult res;
  res.action_id = req.action_id;
  auto t0 = Clock::now();

  int fds[2];
  if (::pipe(fds) != 0) {
    res.exit_code = 125;
    res.output = std::string{"pipe: "} + std::strerror(errno);
    return res;
  }

  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    res.exit_code = 125;
    res.output = std::string{"fork: "} + std::strerror(errno);
    return res;
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(fds[1], STDOUT_FILENO);
    ::dup2(fds[1], STDERR_FILENO);
    ::close(fds[0]);
    ::close(fds[1]);
    ::execl("/bin/sh", "sh", "-c", req.payload.c_str(), (char*)nullptr);
    ::_exit(127);
  }
  ::setpgid(pid, pid);  // also in the child; whichever runs first wins
  g_action_pgid = pid;
  ::close(fds[1]);

  auto deadline = t0 + req.timeout;
  std::string out;
  bool timed_out = false;
  bool reaped = false;
  int status = 0;
  int quiet_rounds = 0;  // rounds with the shell reaped but the pipe open

  while (true) {
    if (!reaped && ::waitpid(pid, &status, WNOHANG) == pid) reaped = true;
    if (!timed_out && Clock::now() >= deadline) {
      timed_out = true;
      ::kill(-pid, SIGKILL);
    }

    struct pollfd p{fds[0], POLLIN, 0};
    int pr = ::poll(&p, 1, 20);
    if (pr > 0) {
      char buf[4096];
      ssize_t n = ::read(fds[0], buf, sizeof buf);
      if (n > 0) {
        if (out.size() < kMaxOutput) {
          out.append(buf, buf + std::min<std::size_t>(static_cast<std::size_t>(n),
                                                      kMaxOutput - out.size()));
        }
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      break;  // EOF: every writer is gone
    }
    if (pr < 0 && errno != EINTR) break;
    // Shell exited but a background child still holds the pipe. Stop
    // draining and let it live — the runtime's session sweep owns its fate.
    if (reaped && ++quiet_rounds >= 5) break;
  }
  ::close(fds[0]);

  // The shell can outlive its stdout (e.g. `exec >&-`); honor the deadline.
  while (!reaped) {
    if (::waitpid(pid, &status, WNOHANG) == pid) {
      reaped = true;
      break;
    }
    if (Clock::now() >= deadline) {
      timed_out = true;
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      reaped = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds{5});
  }
  g_action_pgid = -1;

  res.timed_out = timed_out;
  if (timed_out) {
    res.exit_code = 124;
  } else if (WIFEXITED(status)) {
    res.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    res.exit_code = 128 + WTERMSIG(status);
  } else {
    res.exit_code = 125;
  }
  res.output = std::move(out);
  res.elapsed =
      std::chrono::duration_cast<rollout::Duration>(Clock::now() - t0);
  return res;
}

rollout::sandbox::ActionResult dispatch(const rollout::sandbox::ActionRequest& req) {
  using rollout::sandbox::ActionKind;
  if (g_network_disabled && req.needs_network) {
    rollout::sandbox::ActionResult res;
    res.action_id = req.action_id;
    res.exit_code = 126;
    res.output = "network disabled in this runtime";
    return res;
  }
  switch (req.kind) {
    case ActionKind::BASH:
      return run_bash(req);
    case ActionKind::PING: {
      rollout::sandbox::ActionResult res;
      res.action_id = req.action_id;
      res.output = "pong";
      return res;
    }
    case ActionKind::FINISH: {
      rollout::sandbox::ActionResult res;
      res.action_id = req.action_id;
      res.output = req.payload;
      return res;
    }
  }
  rollout::sandbox::ActionResult res;
  res.action_id = req.action_id;
  res.exit_code = 125;
  res.output = "unhandled action kind";
  return res;
}

int make_listener(const std::string& path) {
  ::unlink(path.c_str());
  int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) return -1;
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) {
    ::close(fd);
    return -1;
  }
  std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd, 1) != 0) {
    ::close(fd);
    return -1;
  }
  return fd;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sandbox action executor"};
  std::string socket_path;
  std::string workdir;
  bool ignore_sigterm = false;
  int startup_delay_ms = 0;
  app.add_option("--socket", socket_path, "unix socket to serve")->required();
  app.add_option("--workdir", workdir, "working directory for actions");
  app.add_flag("--network-disabled", g_network_disabled,
               "refuse actions marked needs_network");
  app.add_flag("--ignore-sigterm", ignore_sigterm,
               "simulate a runtime that will not die politely");
  app.add_option("--startup-delay-ms", startup_delay_ms,
                 "sleep before binding (startup-timeout testing)");
  CLI11_PARSE(app, argc, argv);

  ::signal(SIGPIPE, SIG_IGN);
  ::signal(SIGTERM, ignore_sigterm ? SIG_IGN : on_sigterm);

  if (startup_delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds{startup_delay_ms});
  }
  if (!workdir.empty() && ::chdir(workdir.c_str()) != 0) {
    std::fprintf(stderr, "chdir %s: %s\n", workdir.c_str(), std::strerror(errno));
    return 1;
  }

  int listener = make_listener(socket_path);
  if (listener < 0) {
    std::fprintf(stderr, "cannot listen on %s\n", socket_path.c_str());
    return 1;
  }
  int conn = ::accept(listener, nullptr, nullptr);
  if (conn < 0) return 1;
  ::close(listener);

  try {
    std::string payload;
    while (rollout::sandbox::recv_frame(conn, payload)) {
      rollout::sandbox::ActionResult res;
      try {
        auto req = nlohmann::json::parse(payload)
                       .get<rollout::sandbox::ActionRequest>();
        res = dispatch(req);
      } catch (const std::exception& e) {
        res.exit_code = 125;
        res.output = std::string{"executor error: "} + e.what();
      }
      rollout::sandbox::send_frame(conn, nlohmann::json(res).dump());
      // Reap any stragglers the last action left behind.
      while (::waitpid(-1, nullptr, WNOHANG) > 0) {
      }
    }
  } catch (const std::exception&) {
    ::close(conn);
    return 1;  // torn frame: the host is gone mid-message
  }
  ::close(conn);
  return 0;
}

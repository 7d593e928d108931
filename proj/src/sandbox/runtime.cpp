#include "rollout/sandbox/runtime.hpp"

#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <thread>

#include <json.hpp>

#include "rollout/errors.hpp"
#include "rollout/sandbox/framing.hpp"
#include "rollout/sandbox/proc.hpp"

namespace rollout::sandbox {

namespace {

int connect_unix(const std::string& path) {
  int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
  if (fd < 0) throw Error{"channel", "socket() failed"};
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof addr.sun_path) {
    ::close(fd);
    throw Error{"channel", "socket path too long: " + path};
  }
  std::strcpy(addr.sun_path, path.c_str());
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    int err = errno;
    ::close(fd);
    errno = err;
    return -1;
  }
  return fd;
}

}  // namespace

// ---------------------------------------------------------------- runtime

SandboxRuntime::~SandboxRuntime() {
  try {
    close();
  } catch (...) {
  }
  // Deferred to destruction so a concurrent execute() can never race a
  // reused fd number: close() only shuts the socket down.
  if (channel_fd_ >= 0) {
    ::close(channel_fd_);
    channel_fd_ = -1;
  }
}

ActionResult SandboxRuntime::execute(const ActionRequest& req) {
  if (state() != RuntimeState::READY)
    throw RuntimeClosed{"runtime " + id_ + " is not ready"};
  if (spec_.network_disabled && req.needs_network)
    throw MalformedRequest{"network actions disabled on runtime " + id_};

  std::lock_guard lk{action_mu_};
  if (state() != RuntimeState::READY)
    throw RuntimeClosed{"runtime " + id_ + " closed mid-request"};

  nlohmann::json j = req;
  try {
    send_frame(channel_fd_, j.dump());
  } catch (const Error&) {
    throw RuntimeClosed{"runtime " + id_ + " channel is gone"};
  }

  // The executor enforces req.timeout itself (it kills the subprocess and
  // replies with timed_out set); the extra slack here only catches a hung
  // or killed executor.
  if (!wait_readable(channel_fd_, req.timeout + std::chrono::seconds{5}))
    throw ActionTimeout{"action " + req.action_id + " got no reply"};

  std::string payload;
  bool got = false;
  try {
    got = recv_frame(channel_fd_, payload);
  } catch (const Error&) {
    got = false;
  }
  if (!got) throw RuntimeClosed{"runtime " + id_ + " channel closed mid-request"};

  ActionResult res = nlohmann::json::parse(payload).get<ActionResult>();
  if (res.action_id != req.action_id)
    throw Error{"channel", "action_id mismatch on channel " + id_};
  if (res.timed_out)
    throw ActionTimeout{"action " + req.action_id + " exceeded " +
                        std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(req.timeout).count()) +
                        "ms"};
  return res;
}

void SandboxRuntime::close() { close(spec_.grace); }

void SandboxRuntime::close(Duration grace) {
  std::lock_guard lk{close_mu_};
  if (state() == RuntimeState::CLOSED) return;
  state_.store(RuntimeState::STOPPING, std::memory_order_release);

  // Unblock any in-flight execute() immediately; it fails RuntimeClosed.
  if (channel_fd_ >= 0) ::shutdown(channel_fd_, SHUT_RDWR);

  if (executor_pid_ > 0) {
    // The executor runs in its own session (== its own process group).
    kill_process_group(executor_pid_, SIGTERM);
    if (!wait_exit(executor_pid_, grace)) {
      forced_kill_.store(true, std::memory_order_release);
      kill_process_group(executor_pid_, SIGKILL);
      for (pid_t pid : pids_in_session(executor_pid_)) kill_pid(pid, SIGKILL);
      wait_exit(executor_pid_, std::chrono::seconds{5});
    }
    // Sweep stragglers that escaped the process group (double-forks, or the
    // children of a bash the executor was still supervising).
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds{5};
    for (;;) {
      auto live = pids_in_session(executor_pid_);
      if (live.empty()) break;
      for (pid_t pid : live) kill_pid(pid, SIGKILL);
      if (std::chrono::steady_clock::now() >= deadline) break;
      std::this_thread::sleep_for(std::chrono::milliseconds{10});
    }
  }

  if (!socket_path_.empty()) ::unlink(socket_path_.c_str());
  if (host_ && !address_.empty()) host_->release_address(address_);

  state_.store(RuntimeState::CLOSED, std::memory_order_release);
}

// ------------------------------------------------------------------- host

SandboxHost::SandboxHost(std::filesystem::path runtime_dir,
                         std::uint32_t address_capacity)
    : runtime_dir_(std::move(runtime_dir)), allocator_(address_capacity) {
  std::filesystem::create_directories(runtime_dir_);
}

SandboxHost::~SandboxHost() = default;

std::filesystem::path SandboxHost::executor_path() {
  if (const char* env = std::getenv("ROLLOUT_EXECUTOR"); env && *env)
    return env;
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) throw Error{"spawn", "cannot resolve /proc/self/exe"};
  buf[n] = '\0';
  return std::filesystem::path{buf}.parent_path() / "sandbox-executor";
}

std::vector<pid_t> SandboxHost::spawned_pids() const {
  std::lock_guard lk{mu_};
  return spawned_;
}

void SandboxHost::release_address(const std::string& addr) {
  allocator_.release(addr);
}

std::shared_ptr<SandboxRuntime> SandboxHost::start(const RuntimeSpec& spec) {
  std::string address = allocator_.allocate();
  std::uint64_t serial = next_id_.fetch_add(1);
  std::string id = "rt-" + std::to_string(serial);
  std::filesystem::path workdir = runtime_dir_ / id;
  std::filesystem::create_directories(workdir);
  std::filesystem::path socket_path = workdir / "channel.sock";

  SpawnOptions opts;
  opts.argv = {executor_path().string(), "--socket", socket_path.string(),
               "--workdir", workdir.string()};
  if (spec.network_disabled) opts.argv.push_back("--network-disabled");
  if (spec.ignore_sigterm) opts.argv.push_back("--ignore-sigterm");
  if (spec.startup_delay > Duration{0}) {
    opts.argv.push_back("--startup-delay-ms");
    opts.argv.push_back(std::to_string(
        std::chrono::duration_cast<std::chrono::milliseconds>(spec.startup_delay).count()));
  }
  opts.new_session = true;

  pid_t pid = -1;
  try {
    pid = spawn_process(opts);
  } catch (...) {
    allocator_.release(address);
    throw;
  }
  {
    std::lock_guard lk{mu_};
    spawned_.push_back(pid);
  }

  auto fail_startup = [&](const std::string& why) -> void {
    kill_process_group(pid, SIGKILL);
    wait_exit(pid, std::chrono::seconds{5});
    allocator_.release(address);
    throw StartupTimeout{"runtime " + id + ": " + why};
  };

  // Connect, then prove the channel is live with a ping — all within the
  // startup budget.
  auto deadline = std::chrono::steady_clock::now() + spec.startup_timeout;
  int fd = -1;
  for (;;) {
    fd = connect_unix(socket_path.string());
    if (fd >= 0) break;
    if (!process_alive(pid)) fail_startup("executor exited during startup");
    if (std::chrono::steady_clock::now() >= deadline)
      fail_startup("no channel within startup timeout");
    std::this_thread::sleep_for(std::chrono::milliseconds{5});
  }

  try {
    ActionRequest ping;
    ping.action_id = id + "-startup-ping";
    ping.kind = ActionKind::PING;
    ping.timeout = spec.startup_timeout;
    nlohmann::json j = ping;
    send_frame(fd, j.dump());
    auto remaining = deadline - std::chrono::steady_clock::now();
    if (remaining < Duration{0} ||
        !wait_readable(fd, std::chrono::duration_cast<Duration>(remaining))) {
      ::close(fd);
      fail_startup("no ping reply within startup timeout");
    }
    std::string payload;
    if (!recv_frame(fd, payload)) {
      ::close(fd);
      fail_startup("channel closed during startup ping");
    }
  } catch (const StartupTimeout&) {
    throw;
  } catch (const std::exception& e) {
    ::close(fd);
    fail_startup(std::string{"startup ping failed: "} + e.what());
  }

  auto rt = std::shared_ptr<SandboxRuntime>(new SandboxRuntime());
  rt->id_ = id;
  rt->address_ = address;
  rt->spec_ = spec;
  rt->workdir_ = workdir;
  rt->socket_path_ = socket_path;
  rt->executor_pid_ = pid;
  rt->channel_fd_ = fd;
  rt->host_ = this;
  rt->state_.store(RuntimeState::READY, std::memory_order_release);
  return rt;
}

}  // namespace rollout::sandbox

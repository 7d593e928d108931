#pragma once

#include <sys/types.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "rollout/clock.hpp"
#include "rollout/sandbox/action.hpp"
#include "rollout/sandbox/loopback.hpp"

namespace rollout::sandbox {

struct RuntimeSpec {
  bool fakeroot = false;
  bool network_disabled = false;
  Duration startup_timeout = std::chrono::seconds{10};
  Duration grace = std::chrono::seconds{2};
  // Test hooks forwarded to the executor process.
  Duration startup_delay{0};
  bool ignore_sigterm = false;
};

enum class RuntimeState { STARTING, READY, STOPPING, CLOSED };

class SandboxHost;

// One simulated container: a loopback address, a scratch directory, and an
// executor child process reachable over a unix socket. Actions are serial —
// the agent loop is synchronous, so there is never more than one in flight.
class SandboxRuntime {
 public:
  ~SandboxRuntime();
  SandboxRuntime(const SandboxRuntime&) = delete;
  SandboxRuntime& operator=(const SandboxRuntime&) = delete;

  const std::string& id() const { return id_; }
  const std::string& address() const { return address_; }
  const RuntimeSpec& spec() const { return spec_; }
  RuntimeState state() const { return state_.load(std::memory_order_acquire); }
  pid_t executor_pid() const { return executor_pid_; }

  // Round-trips one action over the channel. Throws RuntimeClosed unless
  // READY, ActionTimeout if the per-request deadline fires (the executor
  // kills the subprocess before replying), MalformedRequest for a
  // network-needing action on a network-disabled runtime.
  ActionResult execute(const ActionRequest& req);

  // SIGTERM to the executor's process group, a grace period, then SIGKILL
  // for whatever is left in its session. Idempotent and safe to call while
  // an action is in flight (the in-flight call fails with RuntimeClosed).
  void close();
  void close(Duration grace);

  // True when close() had to escalate past SIGTERM.
  bool forced_kill() const { return forced_kill_.load(std::memory_order_acquire); }

 private:
  friend class SandboxHost;
  SandboxRuntime() = default;

  std::string id_;
  std::string address_;
  RuntimeSpec spec_;
  std::filesystem::path workdir_;
  std::filesystem::path socket_path_;
  pid_t executor_pid_ = -1;
  int channel_fd_ = -1;
  SandboxHost* host_ = nullptr;

  std::atomic<RuntimeState> state_{RuntimeState::STARTING};
  std::atomic<bool> forced_kill_{false};
  std::mutex action_mu_;  // serializes execute()
  std::mutex close_mu_;   // serializes close()
};

// Factory and bookkeeping for runtimes: owns the address pool and the
// runtime directory, remembers every executor pid it ever spawned so tests
// can assert orphan-freedom after the dust settles.
class SandboxHost {
 public:
  SandboxHost(std::filesystem::path runtime_dir, std::uint32_t address_capacity = 4096);
  ~SandboxHost();

  std::shared_ptr<SandboxRuntime> start(const RuntimeSpec& spec);
  // Uses the host-wide default spec (configurable grace period etc.).
  std::shared_ptr<SandboxRuntime> start() { return start(default_spec_); }
  void set_default_spec(const RuntimeSpec& spec) { default_spec_ = spec; }
  const RuntimeSpec& default_spec() const { return default_spec_; }

  LoopbackAllocator& allocator() { return allocator_; }
  const std::filesystem::path& runtime_dir() const { return runtime_dir_; }

  // Every executor pid ever spawned by this host (census for leak checks).
  std::vector<pid_t> spawned_pids() const;

  // Resolution order: ROLLOUT_EXECUTOR env var, then a sibling of the
  // current binary named "sandbox-executor".
  static std::filesystem::path executor_path();

 private:
  friend class SandboxRuntime;
  void release_address(const std::string& addr);

  std::filesystem::path runtime_dir_;
  LoopbackAllocator allocator_;
  RuntimeSpec default_spec_;
  mutable std::mutex mu_;
  std::vector<pid_t> spawned_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace rollout::sandbox

#include <doctest.h>

#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rollout/errors.hpp"
#include "rollout/sandbox/build_cache.hpp"
#include "rollout/sandbox/framing.hpp"
#include "rollout/sandbox/loopback.hpp"
#include "rollout/sandbox/proc.hpp"
#include "rollout/sandbox/runtime.hpp"
#include "test_util.hpp"

using namespace rollout;
using namespace rollout::sandbox;
using namespace std::chrono_literals;

// ---------------------------------------------------------------- loopback

TEST_CASE("loopback allocator hands out unique addresses from 127.0.0.2") {
  LoopbackAllocator alloc{300};
  CHECK(alloc.allocate() == "127.0.0.2");

  std::set<std::string> seen{"127.0.0.2"};
  for (int i = 0; i < 260; ++i) {
    auto a = alloc.allocate();
    CHECK(seen.insert(a).second);  // never a duplicate
  }
  CHECK(alloc.in_use() == 261);
  CHECK(seen.count("127.0.1.0") == 1);  // third octet rolls over past .0.0.255
  CHECK(seen.count("127.0.0.1") == 0);  // localhost is never handed out
  CHECK(seen.count("127.0.0.0") == 0);
}

TEST_CASE("loopback allocator reuses released addresses LIFO") {
  LoopbackAllocator alloc{16};
  auto a = alloc.allocate();
  auto b = alloc.allocate();
  alloc.release(a);
  alloc.release(b);
  CHECK(alloc.allocate() == b);
  CHECK(alloc.allocate() == a);
  CHECK(alloc.allocate() == "127.0.0.4");  // fresh space continues after reuse
}

TEST_CASE("loopback allocator exhaustion and bad release") {
  LoopbackAllocator alloc{2};
  auto a = alloc.allocate();
  alloc.allocate();
  CHECK_THROWS_AS(alloc.allocate(), PoolExhausted);
  alloc.release(a);
  CHECK(alloc.allocate() == a);

  CHECK_THROWS_AS(alloc.release("127.0.0.99"), MalformedAddress);  // never allocated
  alloc.release(a);
  CHECK_THROWS_AS(alloc.release(a), MalformedAddress);  // double release
}

TEST_CASE("loopback allocator constructor bounds") {
  CHECK_THROWS_AS(LoopbackAllocator{0}, MalformedAddress);
  CHECK_THROWS_AS(LoopbackAllocator{(1u << 24) - 1}, MalformedAddress);
  CHECK_NOTHROW(LoopbackAllocator{(1u << 24) - 2});
}

TEST_CASE("loopback allocator under contention") {
  LoopbackAllocator alloc{64};
  std::mutex mu;
  std::set<std::string> live;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 200; ++i) {
        auto a = alloc.allocate();
        {
          std::lock_guard lk{mu};
          CHECK(live.insert(a).second);  // unique while held
        }
        std::this_thread::yield();
        {
          std::lock_guard lk{mu};
          live.erase(a);
        }
        alloc.release(a);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(alloc.in_use() == 0);
}

// ----------------------------------------------------------------- framing

namespace {

struct SocketPair {
  int a = -1, b = -1;
  SocketPair() {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    a = fds[0];
    b = fds[1];
  }
  ~SocketPair() {
    if (a >= 0) ::close(a);
    if (b >= 0) ::close(b);
  }
  void close_a() {
    ::close(a);
    a = -1;
  }
};

}  // namespace

TEST_CASE("frames round-trip across sizes") {
  SocketPair sp;
  for (std::size_t size : {std::size_t{0}, std::size_t{1}, std::size_t{64 * 1024},
                           std::size_t{1024 * 1024}}) {
    std::string payload(size, 'x');
    for (std::size_t i = 0; i < size; ++i) payload[i] = static_cast<char>(i % 251);
    std::thread writer{[&] { send_frame(sp.a, payload); }};
    std::string got;
    CHECK(recv_frame(sp.b, got));
    writer.join();
    CHECK(got == payload);
  }

  // Back-to-back frames keep their boundaries.
  std::thread writer{[&] {
    send_frame(sp.a, "one");
    send_frame(sp.a, "");
    send_frame(sp.a, "three");
  }};
  std::string got;
  CHECK(recv_frame(sp.b, got));
  CHECK(got == "one");
  CHECK(recv_frame(sp.b, got));
  CHECK(got == "");
  CHECK(recv_frame(sp.b, got));
  CHECK(got == "three");
  writer.join();
}

TEST_CASE("clean EOF at a frame boundary returns false") {
  SocketPair sp;
  send_frame(sp.a, "last");
  sp.close_a();
  std::string got;
  CHECK(recv_frame(sp.b, got));
  CHECK(got == "last");
  CHECK(!recv_frame(sp.b, got));
}

TEST_CASE("truncated frames throw") {
  {
    SocketPair sp;  // header cut short
    char partial[2] = {0, 0};
    REQUIRE(::send(sp.a, partial, 2, 0) == 2);
    sp.close_a();
    std::string got;
    CHECK_THROWS_AS(recv_frame(sp.b, got), Error);
  }
  {
    SocketPair sp;  // body cut short
    char header[4] = {0, 0, 0, 10};
    REQUIRE(::send(sp.a, header, 4, 0) == 4);
    REQUIRE(::send(sp.a, "abc", 3, 0) == 3);
    sp.close_a();
    std::string got;
    CHECK_THROWS_AS(recv_frame(sp.b, got), Error);
  }
}

TEST_CASE("oversized length header is treated as corruption") {
  SocketPair sp;
  unsigned char header[4] = {0xFF, 0xFF, 0xFF, 0xFF};
  REQUIRE(::send(sp.a, header, 4, 0) == 4);
  std::string got;
  CHECK_THROWS_AS(recv_frame(sp.b, got), Error);
  CHECK_THROWS_AS(send_frame(sp.a, std::string((64u << 20) + 1, 'x')), Error);
}

TEST_CASE("wait_readable reports readiness and timeout") {
  SocketPair sp;
  CHECK(!wait_readable(sp.b, 30ms));
  send_frame(sp.a, "ping");
  CHECK(wait_readable(sp.b, 1s));
}

// ------------------------------------------------------------- build cache

TEST_CASE("cache decision truth table: all 12 mode-by-state combinations") {
  ImageKey next{"ubuntu22", "fw-1.0", "lock-aaaa"};
  std::optional<ImageKey> none;
  std::optional<ImageKey> full = next;
  std::optional<ImageKey> lock_differs =
      ImageKey{"ubuntu22", "fw-1.0", "lock-bbbb"};
  std::optional<ImageKey> version_differs =
      ImageKey{"ubuntu22", "fw-2.0", "lock-aaaa"};

  using C = CacheOutcome;
  struct Row {
    CacheMode mode;
    const std::optional<ImageKey>* cached;
    CacheOutcome expect;
  };
  const Row table[] = {
      {CacheMode::SCRATCH, &none, C::REBUILD},
      {CacheMode::SCRATCH, &full, C::REBUILD},
      {CacheMode::SCRATCH, &lock_differs, C::REBUILD},
      {CacheMode::SCRATCH, &version_differs, C::REBUILD},
      {CacheMode::VERSIONED, &none, C::REBUILD},
      {CacheMode::VERSIONED, &full, C::HIT},
      {CacheMode::VERSIONED, &lock_differs, C::HIT},       // lockfile ignored
      {CacheMode::VERSIONED, &version_differs, C::REBUILD},
      {CacheMode::LOCK, &none, C::REBUILD},
      {CacheMode::LOCK, &full, C::HIT},
      {CacheMode::LOCK, &lock_differs, C::REBUILD},
      {CacheMode::LOCK, &version_differs, C::HIT},         // only lockfile counts
  };
  for (const auto& row : table) {
    CAPTURE(cache_mode_name(row.mode));
    CHECK(cache_decision(row.mode, *row.cached, next) == row.expect);
  }
}

TEST_CASE("image digest covers exactly the reuse-deciding fields") {
  ImageKey key{"base", "fw", "lock"};
  ImageKey other_lock{"base", "fw", "lock2"};
  ImageKey other_base{"base2", "fw", "lock"};

  CHECK(image_digest(CacheMode::VERSIONED, key) ==
        image_digest(CacheMode::VERSIONED, other_lock));
  CHECK(image_digest(CacheMode::VERSIONED, key) !=
        image_digest(CacheMode::VERSIONED, other_base));

  CHECK(image_digest(CacheMode::LOCK, key) ==
        image_digest(CacheMode::LOCK, other_base));
  CHECK(image_digest(CacheMode::LOCK, key) !=
        image_digest(CacheMode::LOCK, other_lock));

  // Modes never share sentinels, even for identical keys.
  CHECK(image_digest(CacheMode::VERSIONED, key) != image_digest(CacheMode::LOCK, key));
  CHECK(image_digest(CacheMode::SCRATCH, key) != image_digest(CacheMode::VERSIONED, key));
}

TEST_CASE("image builder reuses sentinels across instances, except scratch") {
  testutil::TempDir tmp;
  ImageKey key{"base", "fw", "lock"};

  ImageBuilder first{tmp.path / "cache"};
  auto b1 = first.build(CacheMode::VERSIONED, key);
  CHECK(b1.outcome == CacheOutcome::REBUILD);
  CHECK(std::filesystem::exists(b1.image));

  ImageBuilder second{tmp.path / "cache"};  // fresh instance, same disk
  auto b2 = second.build(CacheMode::VERSIONED, key);
  CHECK(b2.outcome == CacheOutcome::HIT);
  CHECK(b2.image == b1.image);

  auto s1 = second.build(CacheMode::SCRATCH, key);
  auto s2 = second.build(CacheMode::SCRATCH, key);
  CHECK(s1.outcome == CacheOutcome::REBUILD);
  CHECK(s2.outcome == CacheOutcome::REBUILD);  // scratch never reuses
}

// ----------------------------------------------------------------- runtime

TEST_CASE("runtime lifecycle: ready, actions, close") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};

  auto rt = host.start();
  CHECK(rt->state() == RuntimeState::READY);
  CHECK(rt->address() == "127.0.0.2");
  CHECK(host.allocator().in_use() == 1);
  CHECK(process_alive(rt->executor_pid()));

  ActionRequest ping;
  ping.action_id = "a1";
  ping.kind = ActionKind::PING;
  auto pong = rt->execute(ping);
  CHECK(pong.action_id == "a1");
  CHECK(pong.exit_code == 0);
  CHECK(pong.output == "pong");

  ActionRequest bash;
  bash.action_id = "a2";
  bash.kind = ActionKind::BASH;
  bash.payload = "echo hello; echo oops >&2; exit 3";
  auto res = rt->execute(bash);
  CHECK(res.exit_code == 3);
  CHECK(res.output.find("hello") != std::string::npos);
  CHECK(res.output.find("oops") != std::string::npos);  // stderr is captured too

  pid_t executor = rt->executor_pid();
  rt->close();
  CHECK(rt->state() == RuntimeState::CLOSED);
  CHECK(!process_alive(executor));
  CHECK(host.allocator().in_use() == 0);
  CHECK(!rt->forced_kill());  // polite shutdown sufficed

  rt->close();  // idempotent
  CHECK_THROWS_AS(rt->execute(ping), RuntimeClosed);
}

TEST_CASE("action timeout kills the subprocess but keeps the runtime") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  auto rt = host.start();

  ActionRequest slow;
  slow.action_id = "slow";
  slow.kind = ActionKind::BASH;
  slow.payload = "echo started; sleep 30";
  slow.timeout = 300ms;
  CHECK_THROWS_AS(rt->execute(slow), ActionTimeout);

  // The runtime survives and serves the next action.
  ActionRequest after;
  after.action_id = "after";
  after.kind = ActionKind::BASH;
  after.payload = "echo still-here";
  auto res = rt->execute(after);
  CHECK(res.exit_code == 0);
  CHECK(res.output.find("still-here") != std::string::npos);
  rt->close();
}

TEST_CASE("network-disabled runtime rejects network actions host-side") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  RuntimeSpec spec;
  spec.network_disabled = true;
  auto rt = host.start(spec);

  ActionRequest net;
  net.action_id = "net";
  net.kind = ActionKind::BASH;
  net.payload = "echo should-not-run";
  net.needs_network = true;
  CHECK_THROWS_AS(rt->execute(net), MalformedRequest);

  net.needs_network = false;  // same action without the flag is fine
  CHECK(rt->execute(net).exit_code == 0);
  rt->close();
}

TEST_CASE("close sweeps background children out of the session") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  auto rt = host.start();

  ActionRequest bg;
  bg.action_id = "bg";
  bg.kind = ActionKind::BASH;
  bg.payload = "sleep 300 & echo $!";
  auto res = rt->execute(bg);
  REQUIRE(res.exit_code == 0);
  pid_t child = static_cast<pid_t>(std::stol(res.output));
  REQUIRE(child > 0);
  CHECK(process_alive(child));  // still running after the action returned

  rt->close();
  CHECK(testutil::wait_until([&] { return !process_alive(child); }, 5s));
}

TEST_CASE("stubborn executors get escalated to SIGKILL") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  RuntimeSpec spec;
  spec.ignore_sigterm = true;
  spec.grace = 200ms;
  auto rt = host.start(spec);
  pid_t executor = rt->executor_pid();

  rt->close();
  CHECK(rt->forced_kill());
  CHECK(!process_alive(executor));
  CHECK(host.allocator().in_use() == 0);
}

TEST_CASE("startup timeout reclaims the address and the process") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  RuntimeSpec spec;
  spec.startup_delay = 2s;
  spec.startup_timeout = 300ms;
  CHECK_THROWS_AS(host.start(spec), StartupTimeout);
  CHECK(host.allocator().in_use() == 0);

  auto pids = host.spawned_pids();
  REQUIRE(pids.size() == 1);
  CHECK(testutil::wait_until([&] { return !process_alive(pids[0]); }, 5s));

  // The host itself is still healthy.
  auto rt = host.start();
  CHECK(rt->state() == RuntimeState::READY);
  rt->close();
}

TEST_CASE("executor death surfaces as RuntimeClosed on the next action") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 16};
  auto rt = host.start();
  kill_pid(rt->executor_pid(), SIGKILL);
  REQUIRE(testutil::wait_until([&] { return !process_alive(rt->executor_pid()); }, 5s));

  ActionRequest ping;
  ping.action_id = "p";
  ping.kind = ActionKind::PING;
  CHECK_THROWS_AS(rt->execute(ping), RuntimeClosed);
  rt->close();  // cleanup still works
  CHECK(host.allocator().in_use() == 0);
}

TEST_CASE("host census covers every spawn and capacity gates starts") {
  testutil::TempDir tmp;
  SandboxHost host{tmp.path / "runtimes", 2};

  auto r1 = host.start();
  auto r2 = host.start();
  CHECK_THROWS_AS(host.start(), PoolExhausted);

  r1->close();
  auto r3 = host.start();  // freed capacity is usable again
  r2->close();
  r3->close();

  auto pids = host.spawned_pids();
  CHECK(pids.size() == 3);
  for (pid_t pid : pids) CHECK(!process_alive(pid));
  CHECK(host.allocator().in_use() == 0);
}

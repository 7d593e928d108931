#include <doctest.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "rollout/handler.hpp"
#include "rollout/pipeline.hpp"
#include "test_util.hpp"

using namespace rollout;
using namespace std::chrono_literals;

namespace {

struct Rig {
  testutil::TempDir tmp;
  testutil::MockLlm llm;
  HandlerRegistry registry;
  sandbox::SandboxHost host;
  backend::BackendPool pool;
  Pipeline pipeline;

  explicit Rig(PipelineConfig pcfg = {}, double llm_latency_ms = 0)
      : llm{{}, llm_latency_ms},
        host{tmp.path / "runtimes", 32},
        pipeline{(install_builtin_handlers(registry), registry),
                 ServiceContext{steady_clock_source(), &host, &pool}, pcfg} {
    pool.add_backend(llm.address());
    pipeline.start();
  }

  // Sleepy payload helper: the same few keys over and over.
  static nlohmann::json sleepy(double ms) {
    return {{"init_ms", ms}, {"run_ms", ms}, {"eval_ms", ms}};
  }
};

}  // namespace

TEST_CASE("stages of different jobs overlap") {
  PipelineConfig cfg;
  cfg.workers = {1, 1, 1};
  Rig rig{cfg};

  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 3; ++i)
    rig.pipeline.submit("j" + std::to_string(i), "sleepy", Rig::sleepy(200), {});
  for (int i = 0; i < 3; ++i) {
    auto r = rig.pipeline.await_response("j" + std::to_string(i));
    CHECK(r.at("status") == "DONE");
  }
  auto wall = std::chrono::steady_clock::now() - t0;

  // Serial would be 3 jobs x 3 stages x 200ms = 1.8s; the pipeline fills
  // to (3 + 2) x 200ms = 1.0s. Anything under 1.6s proves overlap.
  CHECK(wall < 1600ms);
}

TEST_CASE("submit validates before mutating anything") {
  Rig rig;
  CHECK_THROWS_AS(rig.pipeline.submit("v1", "no-such-task", {}, {}), UnknownTask);
  CHECK(rig.pipeline.find("v1") == nullptr);  // no trace of the failed submit
  CHECK(rig.pipeline.status().in_flight == 0);

  SamplingParams bad;
  bad.temperature = -1.0;
  CHECK_THROWS_AS(rig.pipeline.submit("v2", "sleepy", {}, bad), MalformedRequest);
  CHECK(rig.pipeline.find("v2") == nullptr);

  rig.pipeline.submit("v3", "sleepy", Rig::sleepy(50), {});
  CHECK_THROWS_AS(rig.pipeline.submit("v3", "sleepy", {}, {}), DuplicateJobId);
  rig.pipeline.await_response("v3");
  // Terminal jobs stay in the table until drain; their ids stay burned.
  CHECK_THROWS_AS(rig.pipeline.submit("v3", "sleepy", {}, {}), DuplicateJobId);
}

TEST_CASE("unknown jobs are rejected by await and cancel") {
  Rig rig;
  CHECK_THROWS_AS(rig.pipeline.await_response("ghost"), UnknownJob);
  CHECK_THROWS_AS(rig.pipeline.cancel("ghost"), UnknownJob);
}

TEST_CASE("cancelling a queued job discards it before any stage runs") {
  PipelineConfig cfg;
  cfg.workers = {1, 1, 1};
  Rig rig{cfg};

  rig.pipeline.submit("hog", "sleepy", {{"init_ms", 800}}, {});
  rig.pipeline.submit("queued", "sleepy", Rig::sleepy(500), {});
  rig.pipeline.cancel("queued");  // still sitting in the INIT queue

  auto r = rig.pipeline.await_response("queued");
  CHECK(r.at("status") == "CANCELLED");
  // It never entered a stage, so no stage time accrued.
  CHECK(r.at("timings").at("init_seconds") == 0.0);
  CHECK(r.at("timings").at("run_seconds") == 0.0);

  CHECK(rig.pipeline.await_response("hog").at("status") == "DONE");
}

TEST_CASE("cancel lands mid-stage and concludes promptly") {
  Rig rig;
  rig.pipeline.submit("c1", "sleepy", {{"run_ms", 30000}}, {});
  auto job = rig.pipeline.find("c1");
  REQUIRE(testutil::wait_until([&] { return job->status() == JobStatus::RUN; }, 5s));

  auto t0 = std::chrono::steady_clock::now();
  rig.pipeline.cancel("c1");
  auto r = rig.pipeline.await_response("c1");
  CHECK(r.at("status") == "CANCELLED");
  CHECK(std::chrono::steady_clock::now() - t0 < 3s);
  CHECK(rig.pipeline.status().cancelled_total == 1);
}

TEST_CASE("cancel interrupts a backend-bound rollout") {
  Rig rig{{}, /*llm_latency_ms=*/500};
  rig.pipeline.submit("c2", "echo", {{"turns", 6}, {"attach_runtime", false}}, {});
  auto job = rig.pipeline.find("c2");
  REQUIRE(testutil::wait_until([&] { return job->status() == JobStatus::RUN; }, 5s));

  auto t0 = std::chrono::steady_clock::now();
  rig.pipeline.cancel("c2");
  CHECK(rig.pipeline.await_response("c2").at("status") == "CANCELLED");
  // Six turns at 500ms each would be 3s; cancellation cuts in well before.
  CHECK(std::chrono::steady_clock::now() - t0 < 2s);
}

TEST_CASE("cancelling a terminal job is a harmless no-op") {
  Rig rig;
  rig.pipeline.submit("t1", "sleepy", {}, {});
  CHECK(rig.pipeline.await_response("t1").at("status") == "DONE");
  CHECK_NOTHROW(rig.pipeline.cancel("t1"));
  CHECK(rig.pipeline.find("t1")->status() == JobStatus::DONE);
  CHECK(rig.pipeline.status().cancelled_total == 0);
}

TEST_CASE("handler faults fail the job with the faulting stage") {
  Rig rig;
  for (auto stage : {"init", "run", "eval"}) {
    std::string id = std::string{"f-"} + stage;
    rig.pipeline.submit(id, "sleepy", {{"fail_stage", stage}}, {});
    auto r = rig.pipeline.await_response(id);
    CAPTURE(stage);
    CHECK(r.at("status") == "FAILED");
    std::string want = stage;
    for (auto& c : want) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    CHECK(r.at("error").at("stage") == want);
    CHECK(r.at("error").at("message").get<std::string>().find("failure") !=
          std::string::npos);
  }
  CHECK(rig.pipeline.status().failed_total == 3);
}

TEST_CASE("budget expiry fails the job from inside the running stage") {
  Rig rig;
  rig.pipeline.submit("b1", "sleepy", {{"run_ms", 30000}}, {}, 300ms);
  auto t0 = std::chrono::steady_clock::now();
  auto r = rig.pipeline.await_response("b1");
  CHECK(r.at("status") == "FAILED");
  CHECK(r.at("error").at("stage") == "RUN");
  CHECK(r.at("error").at("message").get<std::string>().find("exceeded budget") !=
        std::string::npos);
  CHECK(std::chrono::steady_clock::now() - t0 < 5s);

  rig.pipeline.submit("b2", "sleepy", {{"init_ms", 30000}}, {}, 300ms);
  auto r2 = rig.pipeline.await_response("b2");
  CHECK(r2.at("status") == "FAILED");
  CHECK(r2.at("error").at("stage") == "INIT");
}

TEST_CASE("runtime hold-through-eval is configurable") {
  auto during_eval_in_use = [](bool release_after_run) -> std::size_t {
    PipelineConfig cfg;
    cfg.release_runtime_after_run = release_after_run;
    Rig rig{cfg};
    rig.pipeline.submit("r", "sleepy", {{"attach_runtime", true}, {"eval_ms", 800}}, {});
    auto job = rig.pipeline.find("r");
    REQUIRE(testutil::wait_until([&] { return job->status() == JobStatus::EVAL; }, 5s));
    std::this_thread::sleep_for(50ms);  // let the post-RUN release land
    auto in_use = rig.host.allocator().in_use();
    rig.pipeline.await_response("r");
    return in_use;
  };
  CHECK(during_eval_in_use(true) == 0);   // default: freed before eval
  CHECK(during_eval_in_use(false) == 1);  // ablation arm: held through eval
}

TEST_CASE("drain cancels the in-flight work and refuses new submissions") {
  Rig rig;
  rig.pipeline.submit("d1", "sleepy", {{"run_ms", 30000}}, {});
  auto job = rig.pipeline.find("d1");
  REQUIRE(testutil::wait_until([&] { return job->status() == JobStatus::RUN; }, 5s));

  nlohmann::json response;
  std::thread waiter{[&] { response = rig.pipeline.await_response("d1"); }};
  std::this_thread::sleep_for(100ms);

  rig.pipeline.drain_and_stop();
  waiter.join();  // drain_and_stop only returns once waiters composed
  CHECK(response.at("status") == "CANCELLED");
  CHECK(!rig.pipeline.running());
  CHECK_THROWS_AS(rig.pipeline.submit("d2", "sleepy", {}, {}), ServerStopped);
  CHECK_NOTHROW(rig.pipeline.drain_and_stop());  // idempotent
}

TEST_CASE("no job is lost under churn") {
  PipelineConfig cfg;
  cfg.workers = {4, 8, 4};
  Rig rig{cfg};

  const int n = 50;
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    std::string id = "churn-" + std::to_string(i);
    nlohmann::json payload = Rig::sleepy(5 + i % 7);
    if (i % 10 == 3) payload["fail_stage"] = "run";
    rig.pipeline.submit(id, "sleepy", payload, {});
    ids.push_back(id);
  }
  // Cancel a scattering of them while the pool is busy.
  for (int i = 0; i < n; i += 9) rig.pipeline.cancel(ids[i]);

  int done = 0, failed = 0, cancelled = 0;
  for (const auto& id : ids) {
    auto r = rig.pipeline.await_response(id);
    auto s = r.at("status").get<std::string>();
    if (s == "DONE") ++done;
    else if (s == "FAILED") ++failed;
    else if (s == "CANCELLED") ++cancelled;
  }
  CHECK(done + failed + cancelled == n);
  CHECK(cancelled >= 6);  // the explicit cancels all stuck

  auto st = rig.pipeline.status();
  CHECK(st.in_flight == 0);
  CHECK(st.completed_total == static_cast<std::uint64_t>(done));
  CHECK(st.failed_total == static_cast<std::uint64_t>(failed));
  CHECK(st.cancelled_total == static_cast<std::uint64_t>(cancelled));
  CHECK(rig.host.allocator().in_use() == 0);
}

TEST_CASE("status reflects lifecycle and double start is rejected") {
  testutil::TempDir tmp;
  HandlerRegistry registry;
  install_builtin_handlers(registry);
  sandbox::SandboxHost host{tmp.path / "runtimes", 8};
  backend::BackendPool pool;
  Pipeline pipeline{registry, ServiceContext{steady_clock_source(), &host, &pool}};

  CHECK(!pipeline.running());
  CHECK_THROWS_AS(pipeline.submit("s0", "sleepy", {}, {}), ServerStopped);

  pipeline.start();
  CHECK(pipeline.running());
  CHECK_THROWS_AS(pipeline.start(), AlreadyStarted);

  pipeline.submit("s1", "sleepy", {}, {});
  pipeline.await_response("s1");
  auto st = pipeline.status();
  CHECK(st.running);
  CHECK(st.completed_total == 1);
  CHECK(st.in_flight == 0);
  for (auto d : st.queue_depths) CHECK(d == 0);
  pipeline.drain_and_stop();
}

// Scheduling benches, each a child-process orchestration of real server
// binaries over HTTP:
//   scaling  — one job batch against 1/2/4 rollout servers
//   dapo     — batch-wave vs async-replenishment trainer iteration
//   ablation — min-heap routing vs naive static equal split over asymmetric
//              backends; stale-job cleanup vs wait-for-all under stragglers
// Emits CSV and exits nonzero when a directional assertion fails.

#include <limits.h>
#include <stdlib.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rollout/child_process.hpp"
#include "rollout/sandbox/proc.hpp"
#include "rollout/trainer/client.hpp"
#include "rollout/trainer/harness.hpp"
#include "rollout/trainer/workload.hpp"

namespace {

using rollout::ChildProcess;
using rollout::train::RolloutClient;

std::string make_temp_dir() {
  std::string tmpl = "/tmp/rollout-bench-XXXXXX";
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  if (!mkdtemp(buf.data())) throw std::runtime_error{"mkdtemp failed"};
  return std::string{buf.data()};
}

std::string write_config(const std::string& dir, const std::string& name,
                         const std::map<std::string, std::string>& kv) {
  std::string path = dir + "/" + name + ".conf";
  std::ofstream out(path);
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  if (!out) throw std::runtime_error{"cannot write " + path};
  return path;
}

struct ServerHandle {
  ChildProcess proc;
  std::string address;
};

ServerHandle launch_server(const std::string& tmp, const std::string& name,
                           std::map<std::string, std::string> cfg) {
  int port = rollout::sandbox::pick_free_port();
  cfg.emplace("runtime_dir", tmp + "/" + name + "-runtimes");
  std::string config_path = write_config(tmp, name, cfg);
  std::string exe = rollout::self_exe_dir() + "/rollout-server";
  ChildProcess proc{{exe, "--config", config_path, "--port", std::to_string(port)}};
  ServerHandle h{std::move(proc), "http://127.0.0.1:" + std::to_string(port)};
  RolloutClient probe(h.address);
  if (!probe.wait_ready(std::chrono::seconds{15})) {
    throw std::runtime_error{name + " did not come up on " + h.address};
  }
  return h;
}

struct BenchJob {
  int server = 0;
  double run_ms = 0;
  double eval_ms = 0;
  bool attach_runtime = false;
  int run_calls = 0;  // backend generate calls before the sleep
};

std::atomic<std::uint64_t> g_job_counter{0};

// Fires the jobs (one thread per job), returns makespan seconds. window > 0
// admits jobs in submission order with at most `window` in flight — the
// closed-loop shape of a trainer feeding groups as slots free up.
double fire_jobs(const std::vector<std::string>& addrs,
                 const std::vector<BenchJob>& jobs, int& failures,
                 int window = 0) {
  std::atomic<int> failed{0};
  std::mutex mu;
  std::condition_variable cv;
  std::size_t admitted = 0, done = 0;

  auto t0 = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  threads.reserve(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    threads.emplace_back([&, j] {
      if (window > 0) {
        std::unique_lock lk{mu};
        cv.wait(lk, [&] {
          return admitted == j && admitted - done < static_cast<std::size_t>(window);
        });
        ++admitted;
        cv.notify_all();
      }
      const BenchJob& spec = jobs[j];
      nlohmann::json body = {
          {"task_name", "sleepy"},
          {"job_id", "bench-" + std::to_string(g_job_counter++)},
          {"timeout_seconds", 120},
          {"instance",
           {{"run_ms", spec.run_ms},
            {"eval_ms", spec.eval_ms},
            {"attach_runtime", spec.attach_runtime},
            {"run_calls", spec.run_calls},
            {"seed_prompt", false}}},
          {"sampling_params", nlohmann::json::object()}};
      try {
        RolloutClient client(addrs[static_cast<std::size_t>(spec.server)],
                             std::chrono::minutes{5});
        auto res = client.process(body);
        if (res.value("status", "") != "DONE") failed++;
      } catch (const std::exception&) {
        failed++;
      }
      if (window > 0) {
        std::lock_guard lk{mu};
        ++done;
        cv.notify_all();
      }
    });
  }
  for (auto& t : threads) t.join();
  failures += failed.load();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

struct MockHandle {
  ChildProcess proc;
  std::string address;
};

MockHandle launch_mock(double latency_ms, int max_concurrency,
                       std::uint64_t seed) {
  int port = rollout::sandbox::pick_free_port();
  std::string exe = rollout::self_exe_dir() + "/mock-llm";
  ChildProcess proc{{exe, "--port", std::to_string(port), "--latency-mean-ms",
                     std::to_string(latency_ms), "--max-concurrency",
                     std::to_string(max_concurrency), "--seed",
                     std::to_string(seed)}};
  MockHandle h{std::move(proc), "http://127.0.0.1:" + std::to_string(port)};
  if (!rollout::train::wait_port_open("127.0.0.1", port, std::chrono::seconds{15}))
    throw std::runtime_error{"mock backend did not come up on " + h.address};
  return h;
}

void emit(const std::vector<std::string>& rows, const std::string& out_path) {
  if (out_path.empty()) {
    for (const auto& r : rows) std::printf("%s\n", r.c_str());
    return;
  }
  std::ofstream out(out_path);
  for (const auto& r : rows) out << r << "\n";
  std::printf("wrote %s\n", out_path.c_str());
}

std::map<std::string, std::string> plain_config(int workers) {
  return {{"workers_init", std::to_string(workers)},
          {"workers_run", std::to_string(workers)},
          {"workers_eval", std::to_string(workers)},
          {"http_threads", "96"}};
}

// ---- scaling ---------------------------------------------------------------

int cmd_scaling(const std::string& out_path) {
  const int jobs = 64;
  const double run_ms = 500;
  const int workers_per_core = 4;  // per-server run workers
  auto tmp = make_temp_dir();

  std::vector<std::string> rows{"servers,jobs,wall_seconds,speedup_vs_1"};
  double base_wall = 0;
  bool ok = true;

  for (int count : {1, 2, 4}) {
    std::vector<ServerHandle> servers;
    std::vector<std::string> addrs;
    for (int i = 0; i < count; ++i) {
      auto name = "scale-" + std::to_string(count) + "-" + std::to_string(i);
      servers.push_back(launch_server(tmp, name, plain_config(workers_per_core)));
      addrs.push_back(servers.back().address);
    }
    std::vector<BenchJob> batch(static_cast<std::size_t>(jobs));
    for (int j = 0; j < jobs; ++j) {
      batch[static_cast<std::size_t>(j)] = {j % count, run_ms, 0, false};
    }
    int failures = 0;
    double wall = fire_jobs(addrs, batch, failures);
    if (failures > 0) {
      std::fprintf(stderr, "scaling: %d jobs failed at %d servers\n", failures,
                   count);
      ok = false;
    }
    if (count == 1) base_wall = wall;
    double speedup = wall > 0 ? base_wall / wall : 0;
    rows.push_back(std::to_string(count) + "," + std::to_string(jobs) + "," +
                   std::to_string(wall) + "," + std::to_string(speedup));
    if (count == 2 && speedup < 1.8) ok = false;
    if (count == 4 && speedup < 3.2) ok = false;
    for (auto& s : servers) RolloutClient(s.address).stop();
  }
  emit(rows, out_path);
  std::printf("scaling: %s\n", ok ? "ok" : "FAILED (speedup below threshold)");
  return ok ? 0 : 1;
}

// ---- dapo ------------------------------------------------------------------

int cmd_dapo(std::uint64_t seed, const std::string& out_path) {
  auto tmp = make_temp_dir();
  // Worker pools sized above peak concurrency so job latency is the
  // scripted latency, not queueing noise.
  auto server = launch_server(tmp, "dapo", {{"workers_init", "64"},
                                            {"workers_run", "96"},
                                            {"workers_eval", "64"},
                                            {"http_threads", "96"}});

  rollout::train::WorkloadGenOptions gen;
  gen.seed = seed;
  auto w = rollout::train::generate_workload(gen);
  rollout::train::IterationPlan plan;  // target 8, cap 8

  rollout::train::TrainerOptions topts;
  topts.job_timeout_seconds = 60;

  topts.ledger_path = tmp + "/batch.jsonl";
  rollout::train::TrainerHarness batch({server.address}, topts);
  auto sb = batch.run_iteration_batch(w, plan);

  topts.ledger_path = tmp + "/async.jsonl";
  rollout::train::TrainerHarness async_({server.address}, topts);
  auto sa = async_.run_iteration_async(w, plan);

  std::vector<std::string> rows{
      "mode,seed,wall_seconds,idle_fraction,rollouts_issued,cancels_issued,waves"};
  auto row = [&](const char* mode, const rollout::train::IterationStats& s) {
    rows.push_back(std::string{mode} + "," + std::to_string(seed) + "," +
                   std::to_string(s.wall_seconds) + "," +
                   std::to_string(s.idle_fraction) + "," +
                   std::to_string(s.rollouts_issued) + "," +
                   std::to_string(s.cancels_issued) + "," +
                   std::to_string(s.waves));
  };
  row("batch", sb);
  row("async", sa);
  emit(rows, out_path);

  bool ok = sa.wall_seconds < sb.wall_seconds &&
            sa.idle_fraction < sb.idle_fraction;
  std::printf("dapo: async %.2fs idle %.2f vs batch %.2fs idle %.2f — %s\n",
              sa.wall_seconds, sa.idle_fraction, sb.wall_seconds,
              sb.idle_fraction, ok ? "ok" : "FAILED");
  RolloutClient(server.address).stop();
  return ok ? 0 : 1;
}

// ---- ablation ----------------------------------------------------------------

int cmd_ablation(int seeds, const std::string& out_path) {
  auto tmp = make_temp_dir();
  std::vector<std::string> rows{"ablation,seed,arm,wall_seconds,margin"};
  bool ok = true;

  // Load balancing: one fast and one slow backend (200ms vs 500ms per call,
  // 4 slots each), 32 single-call jobs admitted through a window of 8 in
  // submission order. Min-heap routing keeps both backends busy the whole
  // run; the naive equal split works through the fast half before the slow
  // half starts, leaving the slow backend idle up front.
  double lb_sum_heap = 0, lb_sum_static = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    auto fast = launch_mock(200, 4, 1000 + static_cast<std::uint64_t>(seed));
    auto slow = launch_mock(500, 4, 2000 + static_cast<std::uint64_t>(seed));
    const int n_jobs = 32, window = 8;
    std::vector<BenchJob> batch(static_cast<std::size_t>(n_jobs));
    for (auto& b : batch) b.run_calls = 1;

    double wall_heap, wall_static;
    {
      auto s = launch_server(tmp, "lb-heap-" + std::to_string(seed),
                             plain_config(16));
      RolloutClient c(s.address);
      c.add_llm_server(fast.address);
      c.add_llm_server(slow.address);
      int failures = 0;
      wall_heap = fire_jobs({s.address}, batch, failures, window);
      ok = ok && failures == 0;
      c.stop();
    }
    {
      auto sf = launch_server(tmp, "lb-static-f-" + std::to_string(seed),
                              plain_config(16));
      auto ss = launch_server(tmp, "lb-static-s-" + std::to_string(seed),
                              plain_config(16));
      RolloutClient(sf.address).add_llm_server(fast.address);
      RolloutClient(ss.address).add_llm_server(slow.address);
      auto split = batch;
      for (int j = 0; j < n_jobs; ++j)
        split[static_cast<std::size_t>(j)].server = j < n_jobs / 2 ? 0 : 1;
      int failures = 0;
      wall_static = fire_jobs({sf.address, ss.address}, split, failures, window);
      ok = ok && failures == 0;
      RolloutClient(sf.address).stop();
      RolloutClient(ss.address).stop();
    }
    lb_sum_heap += wall_heap;
    lb_sum_static += wall_static;
    double margin = wall_heap > 0 ? wall_static / wall_heap : 0;
    rows.push_back("lb," + std::to_string(seed) + ",minheap," +
                   std::to_string(wall_heap) + "," + std::to_string(margin));
    rows.push_back("lb," + std::to_string(seed) + ",static," +
                   std::to_string(wall_static) + ",");
  }
  double lb_margin = lb_sum_heap > 0 ? lb_sum_static / lb_sum_heap : 0;
  if (lb_margin <= 1.0) ok = false;

  // Stale-job cleanup: same async iteration, with and without cancelling
  // outstanding rollouts once the informative target is met. Stragglers in
  // the workload are what the wait-for-all arm ends up waiting on.
  auto server = launch_server(tmp, "cleanup", {{"workers_init", "64"},
                                               {"workers_run", "96"},
                                               {"workers_eval", "64"},
                                               {"http_threads", "96"}});
  double cl_sum_cancel = 0, cl_sum_waitall = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    rollout::train::WorkloadGenOptions gen;
    gen.seed = 3000 + static_cast<std::uint64_t>(seed);
    auto w = rollout::train::generate_workload(gen);

    rollout::train::TrainerOptions topts;
    topts.job_timeout_seconds = 60;

    topts.ledger_path = tmp + "/cleanup-" + std::to_string(seed) + ".jsonl";
    rollout::train::IterationPlan with_cancel;
    rollout::train::TrainerHarness h1({server.address}, topts);
    auto s1 = h1.run_iteration_async(w, with_cancel);

    topts.ledger_path = tmp + "/waitall-" + std::to_string(seed) + ".jsonl";
    rollout::train::IterationPlan wait_for_all;
    wait_for_all.cancel_stale = false;
    rollout::train::TrainerHarness h2({server.address}, topts);
    auto s2 = h2.run_iteration_async(w, wait_for_all);

    cl_sum_cancel += s1.wall_seconds;
    cl_sum_waitall += s2.wall_seconds;
    double margin = s1.wall_seconds > 0 ? s2.wall_seconds / s1.wall_seconds : 0;
    rows.push_back("cleanup," + std::to_string(seed) + ",cancel," +
                   std::to_string(s1.wall_seconds) + "," + std::to_string(margin));
    rows.push_back("cleanup," + std::to_string(seed) + ",waitall," +
                   std::to_string(s2.wall_seconds) + ",");
  }
  RolloutClient(server.address).stop();
  double cl_margin = cl_sum_cancel > 0 ? cl_sum_waitall / cl_sum_cancel : 0;
  if (cl_margin <= 1.0) ok = false;

  emit(rows, out_path);
  std::printf("ablation: lb margin %.2fx, cleanup margin %.2fx — %s\n",
              lb_margin, cl_margin, ok ? "ok" : "FAILED (margin not positive)");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rollout scheduling benches"};
  app.require_subcommand(1);

  std::string out_path;
  std::uint64_t seed = 0;
  int seeds = 5;
  app.add_option("--out", out_path, "CSV output path (default stdout)");

  auto* scaling = app.add_subcommand("scaling", "throughput vs server count");
  auto* dapo = app.add_subcommand("dapo", "batch vs async trainer iteration");
  dapo->add_option("--seed", seed, "workload seed");
  auto* ablation = app.add_subcommand("ablation", "lb + cleanup ablations");
  ablation->add_option("--seeds", seeds, "seeds per ablation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (scaling->parsed()) return cmd_scaling(out_path);
    if (dapo->parsed()) return cmd_dapo(seed, out_path);
    if (ablation->parsed()) return cmd_ablation(seeds, out_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rollout-bench: %s\n", e.what());
    return 2;
  }
  return 2;
}

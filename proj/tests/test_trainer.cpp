#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rollout/api_server.hpp"
#include "rollout/service.hpp"
#include "rollout/trainer/client.hpp"
#include "rollout/trainer/harness.hpp"
#include "rollout/trainer/workload.hpp"
#include "test_util.hpp"

using namespace rollout;
using namespace rollout::train;
using namespace std::chrono_literals;

namespace {

// In-process rollout server sized for a whole iteration's worth of rollouts.
struct ServerRig {
  testutil::TempDir tmp;
  ServiceConfig cfg;
  RolloutService service;
  ApiServer api;
  std::string address;

  ServerRig()
      : cfg{make_config(tmp)},
        service{cfg},
        api{service, "127.0.0.1", 0},
        address{(api.start(),
                 "http://127.0.0.1:" + std::to_string(api.port()))} {
    service.start();
  }

  static ServiceConfig make_config(const testutil::TempDir& tmp) {
    ServiceConfig c;
    c.port = 0;
    c.workers_init = 8;
    c.workers_run = 24;
    c.workers_eval = 8;
    c.http_threads = 48;
    c.runtime_dir = (tmp.path / "runtimes").string();
    return c;
  }
};

PromptGroup group_of(std::vector<std::optional<RolloutOutcome>> outcomes) {
  PromptGroup g;
  g.prompt_id = "g";
  g.n = static_cast<int>(outcomes.size());
  g.outcomes = std::move(outcomes);
  return g;
}

RolloutOutcome outcome(double reward, const std::string& status = "DONE") {
  RolloutOutcome o;
  o.reward = reward;
  o.status = status;
  return o;
}

// Small all-informative workload with quick rollouts.
Workload quick_workload(int prompts, int n, std::uint64_t seed) {
  WorkloadGenOptions opts;
  opts.num_prompts = prompts;
  opts.rollouts_per_prompt = n;
  opts.seed = seed;
  opts.informative_probability = 1.0;
  opts.base_ms_min = 10;
  opts.base_ms_max = 60;
  opts.straggler_fraction = 0.0;
  return generate_workload(opts);
}

}  // namespace

// -------------------------------------------------------------- assignment

TEST_CASE("hierarchical assignment: host matches first, round-robin rest") {
  std::vector<std::string> servers{"http://10.0.0.2:8000", "http://10.0.0.1:8000"};
  std::vector<std::string> backends{
      "http://10.0.0.1:9000",   // host-matches server .1
      "http://10.0.0.2:9001",   // host-matches server .2
      "http://10.0.0.9:9002",   // no host match
      "http://10.0.0.9:9003",   // no host match
  };
  auto table = hierarchical_assign(servers, backends);
  REQUIRE(table.by_server.size() == 2);

  const auto& s1 = table.by_server.at("http://10.0.0.1:8000");
  const auto& s2 = table.by_server.at("http://10.0.0.2:8000");
  CHECK(std::count(s1.begin(), s1.end(), "http://10.0.0.1:9000") == 1);
  CHECK(std::count(s2.begin(), s2.end(), "http://10.0.0.2:9001") == 1);
  // The unmatched pair is dealt across the sorted server list from index 0.
  CHECK(std::count(s1.begin(), s1.end(), "http://10.0.0.9:9002") == 1);
  CHECK(std::count(s2.begin(), s2.end(), "http://10.0.0.9:9003") == 1);
}

TEST_CASE("hierarchical assignment shares one host across its servers") {
  std::vector<std::string> servers{"http://10.0.0.1:8001", "http://10.0.0.1:8000"};
  std::vector<std::string> backends{"http://10.0.0.1:9000", "http://10.0.0.1:9001",
                                    "http://10.0.0.1:9002"};
  auto table = hierarchical_assign(servers, backends);
  // Round-robin in sorted server order: 8000 gets two, 8001 gets one.
  CHECK(table.by_server.at("http://10.0.0.1:8000").size() == 2);
  CHECK(table.by_server.at("http://10.0.0.1:8001").size() == 1);
}

TEST_CASE("hierarchical assignment input validation") {
  CHECK_THROWS_AS(hierarchical_assign({}, {"http://10.0.0.1:9000"}),
                  MalformedRequest);
  CHECK_THROWS_AS(hierarchical_assign({"http://10.0.0.1:8000", "http://10.0.0.1:8000"},
                                      {"http://10.0.0.1:9000"}),
                  DuplicateAddress);
}

TEST_CASE("hierarchical assignment properties under random shapes") {
  std::mt19937 gen{7};
  for (int trial = 0; trial < 40; ++trial) {
    int n_servers = 1 + static_cast<int>(gen() % 6);
    int n_backends = static_cast<int>(gen() % 7);
    std::vector<std::string> servers, backends;
    for (int i = 0; i < n_servers; ++i)
      servers.push_back("http://10.0." + std::to_string(gen() % 3) + ".1:" +
                        std::to_string(8000 + i));
    for (int i = 0; i < n_backends; ++i)
      backends.push_back("http://10.0." + std::to_string(gen() % 3) + ".1:" +
                         std::to_string(9000 + i));

    auto table = hierarchical_assign(servers, backends);
    CHECK(table.by_server.size() == servers.size());  // every server has a row

    std::multiset<std::string> assigned;
    for (const auto& [server, list] : table.by_server)
      assigned.insert(list.begin(), list.end());
    std::multiset<std::string> expected{backends.begin(), backends.end()};
    CHECK(assigned == expected);  // each backend exactly once
  }
}

// ------------------------------------------------------------- informative

TEST_CASE("informative filter: variance over usable rewards") {
  CHECK(!is_informative(group_of({outcome(1), outcome(1), outcome(1), outcome(1)})));
  CHECK(is_informative(group_of({outcome(1), outcome(0), outcome(1), outcome(1)})));

  // FAILED rollouts are excluded before the variance check.
  CHECK(!is_informative(
      group_of({outcome(1), outcome(1), outcome(0, "FAILED"), outcome(1)})));
  // Fewer than two usable rewards can never be informative.
  CHECK(!is_informative(group_of({outcome(1), outcome(0, "FAILED")})));

  // Strictly-greater-than-tolerance boundary.
  auto near = group_of({outcome(0.0), outcome(0.1)});
  CHECK(is_informative(near));
  CHECK(!is_informative(near, 0.1));
  CHECK(is_informative(near, 0.099));

  auto partial = group_of({outcome(1), std::nullopt});
  CHECK_THROWS_AS(is_informative(partial), IncompleteGroup);
}

// ----------------------------------------------------------------- workload

TEST_CASE("workload generation is seed-deterministic") {
  WorkloadGenOptions opts;
  opts.num_prompts = 16;
  opts.seed = 99;
  auto a = generate_workload(opts);
  auto b = generate_workload(opts);
  CHECK(workload_to_json(a) == workload_to_json(b));

  opts.seed = 100;
  CHECK(workload_to_json(generate_workload(opts)) != workload_to_json(a));
}

TEST_CASE("informative probability hits both extremes") {
  WorkloadGenOptions opts;
  opts.num_prompts = 24;
  opts.informative_probability = 1.0;
  for (const auto& p : generate_workload(opts).prompts) {
    auto [mn, mx] = std::minmax_element(p.rewards.begin(), p.rewards.end());
    CHECK(*mx > *mn);
  }
  opts.informative_probability = 0.0;
  for (const auto& p : generate_workload(opts).prompts) {
    auto [mn, mx] = std::minmax_element(p.rewards.begin(), p.rewards.end());
    CHECK(*mx == *mn);
  }
}

TEST_CASE("workload save/load round-trip and validation") {
  testutil::TempDir tmp;
  auto w = quick_workload(6, 4, 3);
  auto path = (tmp.path / "workload.json").string();
  save_workload(w, path);
  auto loaded = load_workload(path);
  CHECK(workload_to_json(loaded) == workload_to_json(w));

  nlohmann::json bad = workload_to_json(w);
  bad["prompts"][0]["rewards"] = {1.0};  // wrong length
  CHECK_THROWS_AS(workload_from_json(bad), MalformedRequest);
  CHECK_THROWS_AS(workload_from_json(nlohmann::json::array()), MalformedRequest);
  CHECK_THROWS_AS(load_workload((tmp.path / "missing.json").string()), Error);
}

// ------------------------------------------------------------- iterations

TEST_CASE("batch iteration collects the target and writes the ledger") {
  ServerRig server;
  testutil::TempDir tmp;

  TrainerOptions topts;
  topts.job_timeout_seconds = 60;
  topts.ledger_path = (tmp.path / "ledger.jsonl").string();
  TrainerHarness harness{{server.address}, topts};

  auto w = quick_workload(12, 4, 21);
  IterationPlan plan;
  plan.target_informative = 4;
  plan.concurrency_cap = 4;

  auto stats = harness.run_iteration_batch(w, plan);
  CHECK(stats.informative.size() == 4);
  CHECK(stats.waves == 1);  // all-informative workload: one wave suffices
  CHECK(stats.rollouts_issued == 16);
  CHECK(stats.cancels_issued == 0);  // batch waits everything out
  CHECK(harness.cursor() == 4);
  for (const auto& g : stats.informative) {
    CHECK(g.state == GroupState::COMPLETE);
    CHECK(is_informative(g));
  }

  // Ledger: one JSONL row per recorded rollout, exactly these six keys.
  std::ifstream ledger{topts.ledger_path};
  REQUIRE(ledger.is_open());
  int lines = 0;
  for (std::string line; std::getline(ledger, line);) {
    auto row = nlohmann::json::parse(line);
    ++lines;
    CHECK(row.size() == 6);
    for (const char* key :
         {"iteration", "prompt_id", "rollout_index", "reward", "wall_time", "address"})
      CHECK(row.contains(key));
    CHECK(row.at("iteration") == 1);
  }
  CHECK(lines == stats.rollouts_issued);

  harness.reset_cursor();
  CHECK(harness.cursor() == 0);
}

TEST_CASE("async iteration replenishes, cancels stale work, carries over") {
  ServerRig server;

  TrainerOptions topts;
  topts.job_timeout_seconds = 60;
  TrainerHarness harness{{server.address}, topts};

  // One fast informative prompt, one slow one: the fast group satisfies the
  // target while the slow group is still in flight.
  Workload w;
  w.rollouts_per_prompt = 3;
  w.prompts.push_back({"fast", {}, {1, 0, 1}, {30, 30, 30}});
  w.prompts.push_back({"slow", {}, {1, 0, 1}, {1200, 1200, 1200}});

  IterationPlan plan;
  plan.target_informative = 1;
  plan.concurrency_cap = 2;

  auto stats = harness.run_iteration_async(w, plan);
  REQUIRE(stats.informative.size() == 1);
  CHECK(stats.informative[0].prompt_id == "fast");
  CHECK(stats.rollouts_issued == 6);
  CHECK(stats.cancels_issued >= 1);  // the slow group was reaped
  CHECK(stats.wall_seconds < 1.0);   // nobody waited for the stragglers
  REQUIRE(stats.carried_over.size() == 1);
  CHECK(stats.carried_over[0].prompt_id == "slow");
  CHECK(stats.carried_over[0].state == GroupState::CARRIED_OVER);

  // The carryover group is consumed first by the next iteration.
  IterationPlan plan2;
  plan2.target_informative = 1;
  plan2.concurrency_cap = 2;
  plan2.carryover = stats.carried_over;
  auto stats2 = harness.run_iteration_async(w, plan2);
  REQUIRE(stats2.informative.size() == 1);
  CHECK(stats2.informative[0].prompt_id == "slow");
  CHECK(stats2.informative[0].state == GroupState::COMPLETE);

  CHECK(stats.idle_fraction >= 0.0);
  CHECK(stats.idle_fraction <= 1.0);
}

TEST_CASE("iteration aborts honestly when the workload cannot satisfy it") {
  ServerRig server;
  TrainerHarness harness{{server.address}, {}};

  // Two prompts, both zero-variance: never informative.
  Workload w;
  w.rollouts_per_prompt = 2;
  w.prompts.push_back({"u1", {}, {1, 1}, {20, 20}});
  w.prompts.push_back({"u2", {}, {1, 1}, {20, 20}});

  IterationPlan plan;
  plan.target_informative = 1;
  plan.concurrency_cap = 2;

  try {
    harness.run_iteration_async(w, plan);
    FAIL("iteration should have aborted");
  } catch (const Error& e) {
    CHECK(e.code() == "workload_exhausted");
  }
}

TEST_CASE("wait-for-all mode issues no cancels") {
  ServerRig server;
  TrainerHarness harness{{server.address}, {}};

  Workload w;
  w.rollouts_per_prompt = 2;
  w.prompts.push_back({"a", {}, {1, 0}, {30, 30}});
  w.prompts.push_back({"b", {}, {1, 0}, {300, 300}});

  IterationPlan plan;
  plan.target_informative = 1;
  plan.concurrency_cap = 2;
  plan.cancel_stale = false;

  auto stats = harness.run_iteration_async(w, plan);
  CHECK(stats.informative.size() == 1);
  CHECK(stats.cancels_issued == 0);
  // Without cleanup the iteration drags until the slow group finishes too.
  CHECK(stats.wall_seconds >= 0.3);
}

// ---------------------------------------------------------- checkpoint swap

TEST_CASE("checkpoint swap clears, holds, and reassigns hierarchically") {
  ServerRig s1;
  ServerRig s2;
  RolloutClient c1{s1.address};
  RolloutClient c2{s2.address};
  c1.add_llm_server("http://127.0.0.1:7101");
  c2.add_llm_server("http://127.0.0.1:7102");

  TrainerHarness harness{{s1.address, s2.address}, {}};
  auto report = harness.checkpoint_swap(
      {"http://127.0.0.1:7201", "http://127.0.0.1:7202"}, /*hold_ms=*/150);

  CHECK(report.backends_cleared == 2);
  CHECK(report.backends_added == 2);
  CHECK(report.window_seconds >= 0.14);
  CHECK(report.window_seconds < 2.0);

  // Both loopback servers share the host, so each ends up with one backend.
  CHECK(c1.status().at("backends").size() == 1);
  CHECK(c2.status().at("backends").size() == 1);
}

#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rollout/clock.hpp"
#include "rollout/trainer/client.hpp"
#include "rollout/trainer/workload.hpp"

namespace rollout::train {

// ---- hierarchical assignment -------------------------------------------

struct AssignmentTable {
  // rollout-server address → backend addresses it should register
  std::map<std::string, std::vector<std::string>> by_server;
};

// Phase 1: backends land on a rollout server with the same host IP
// (round-robin in address order when several servers share the host).
// Phase 2: the rest are dealt round-robin over servers in address order.
AssignmentTable hierarchical_assign(const std::vector<std::string>& servers,
                                    const std::vector<std::string>& backends);

// ---- prompt groups -------------------------------------------------------

enum class GroupState { PENDING, IN_FLIGHT, COMPLETE, CARRIED_OVER };

struct RolloutOutcome {
  double reward = 0.0;
  std::string status;  // DONE / FAILED / CANCELLED
  std::string address; // backend that served it, when reported
  double wall_seconds = 0.0;
};

struct PromptGroup {
  std::string prompt_id;
  nlohmann::json payload;
  int n = 0;
  std::vector<std::optional<RolloutOutcome>> outcomes;  // slot per rollout
  GroupState state = GroupState::PENDING;

  int completed_count() const;
  bool complete() const;  // every slot filled
  // Rewards from non-FAILED rollouts (infrastructure errors are excluded
  // from the variance check).
  std::vector<double> usable_rewards() const;
};

// False iff fewer than 2 usable rewards or all usable rewards equal (within
// `tolerance`, default exact). Throws IncompleteGroup unless state allows
// partial inspection (carryover filtering never calls this early).
bool is_informative(const PromptGroup& g, double tolerance = 0.0);

// ---- iteration running ---------------------------------------------------

struct IterationPlan {
  int target_informative = 8;
  int concurrency_cap = 8;  // groups in flight at once
  // Stale-job cleanup: cancel outstanding rollouts once the target is met.
  // false = wait-for-all, kept for the ablation bench.
  bool cancel_stale = true;
  std::vector<PromptGroup> carryover;
};

struct IterationStats {
  std::vector<PromptGroup> informative;
  std::vector<PromptGroup> carried_over;  // async: partial groups at cutoff
  double wall_seconds = 0.0;
  int rollouts_issued = 0;
  int cancels_issued = 0;
  int waves = 0;  // batch mode
  // Fraction of wall time with fewer than concurrency_cap groups in flight
  // while informative demand remained — the idle the async scheduler removes.
  double idle_fraction = 0.0;
};

struct SwapReport {
  int backends_cleared = 0;
  int backends_added = 0;
  double window_seconds = 0.0;  // how long the pool sat empty
};

struct TrainerOptions {
  int max_waves = 50;
  double job_timeout_seconds = 120;
  std::string ledger_path;  // empty = no ledger
  std::uint64_t seed = 0;   // reserved for future stochastic policies
};

// Plays the trainer's role against one or more rollout servers: issues
// blocking /process calls (one thread per in-flight rollout), collects
// rewards into prompt groups, filters zero-variance groups, and runs either
// the batch-by-batch baseline or the asynchronous replenishment scheduler.
class TrainerHarness {
 public:
  TrainerHarness(std::vector<std::string> server_addresses,
                 TrainerOptions opts = {});
  ~TrainerHarness();

  // Baseline: full waves of target_informative fresh groups, wait for all,
  // filter, repeat. Aborts with a diagnostic after max_waves.
  IterationStats run_iteration_batch(const Workload& w, IterationPlan plan);

  // Replenishment: keep concurrency_cap groups in flight, filter on each
  // completion, top up immediately, cancel everything outstanding once the
  // target is met; partially completed groups become carryover.
  IterationStats run_iteration_async(const Workload& w, IterationPlan plan);

  // Clear + re-register on every server. `hold_ms` keeps the pool
  // deliberately empty for that long (swap-window tests).
  SwapReport checkpoint_swap(const std::vector<std::string>& new_backends,
                             double hold_ms = 0.0);

  // Fresh-prompt cursor over the workload, persisted across iterations.
  void reset_cursor() { cursor_ = 0; }
  std::size_t cursor() const { return cursor_; }

 private:
  struct Dispatch;
  IterationStats run_iteration(const Workload& w, IterationPlan plan, bool async);
  std::vector<PromptGroup> take_groups(const Workload& w, IterationPlan& plan,
                                       int count);

  std::vector<std::string> servers_;
  TrainerOptions opts_;
  std::size_t cursor_ = 0;
  std::string run_tag_;  // job ids must not collide across harness instances
  std::uint64_t next_job_serial_ = 0;
  int iteration_ = 0;  // ledger tag, bumped per run_iteration_* call

  std::mutex ledger_mu_;
  std::ofstream ledger_;
};

}  // namespace rollout::train

#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rollout/handler.hpp"
#include "rollout/job.hpp"
#include "rollout/types.hpp"

namespace rollout {

// Thread-safe FIFO of job ids, one per stage. Unbounded: backpressure is
// the client's concern, and bounded queues would deadlock stage handoff.
class StageQueue {
 public:
  void push(std::string job_id);
  // Blocks until an item arrives or the queue is closed; nullopt on close
  // with an empty queue (workers treat that as shutdown).
  std::optional<std::string> pop();
  void close();
  std::size_t depth() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> items_;
  bool closed_ = false;
};

struct PipelineConfig {
  std::array<int, kStageCount> workers{8, 16, 8};  // indexed by Stage
  Duration default_budget = std::chrono::seconds{600};
  // Free each job's sandbox as soon as RUN finishes instead of holding it
  // through EVAL. Off only for ablation benches.
  bool release_runtime_after_run = true;
};

struct StatusSnapshot {
  bool running = false;
  std::array<std::size_t, kStageCount> queue_depths{};
  std::size_t in_flight = 0;
  std::uint64_t completed_total = 0;
  std::uint64_t failed_total = 0;
  std::uint64_t cancelled_total = 0;
};

// The three-stage rollout engine. Stage worker pools drain their queues
// independently so INIT/RUN/EVAL of different jobs overlap; cancellation,
// timeouts, and handler faults all land in exactly one terminal transition
// per job.
class Pipeline {
 public:
  Pipeline(const HandlerRegistry& registry, ServiceContext ctx,
           PipelineConfig cfg = {});
  ~Pipeline();

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void start();

  // Validates the task, creates the job record, enqueues INIT. Throws
  // UnknownTask / DuplicateJobId / ServerStopped; on any throw no queue or
  // table mutation survives.
  JobPtr submit(const std::string& job_id, const std::string& task_name,
                nlohmann::json payload, SamplingParams sampling,
                std::optional<Duration> budget = std::nullopt);

  // Blocks until the job goes terminal, then composes the wire response
  // via the handler's final_result. Throws UnknownJob.
  nlohmann::json await_response(const std::string& job_id);

  // Discard-mark, cooperative cancel signal, immediate runtime close,
  // completion fire — in that order. Cancelling a terminal job is a no-op.
  // Throws UnknownJob.
  void cancel(const std::string& job_id);

  // Cancels everything in flight, waits for blocked await_response calls to
  // compose their responses, stops the workers. Idempotent.
  void drain_and_stop();

  bool running() const { return running_.load(std::memory_order_acquire); }
  StatusSnapshot status() const;
  JobPtr find(const std::string& job_id) const;

 private:
  struct JobRecord {
    JobPtr job;
    std::shared_ptr<AgentHandler> handler;
  };

  void worker_loop(Stage stage);
  std::shared_ptr<JobRecord> lookup(const std::string& job_id) const;
  // Single chokepoint for terminal transitions; returns true for the winner.
  bool finalize(JobRecord& rec, JobStatus status,
                std::optional<ErrorInfo> err = std::nullopt);
  bool is_discarded(const std::string& job_id) const;
  void run_stage(JobRecord& rec, Stage stage);

  const HandlerRegistry& registry_;
  ServiceContext ctx_;
  PipelineConfig cfg_;

  std::array<StageQueue, kStageCount> queues_;
  std::vector<std::thread> workers_;

  mutable std::mutex table_mu_;
  std::unordered_map<std::string, std::shared_ptr<JobRecord>> table_;
  bool stopping_ = false;  // guarded by table_mu_: submit vs stop is atomic

  mutable std::mutex discard_mu_;
  std::unordered_set<std::string> discarded_;

  std::atomic<bool> running_{false};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::uint64_t> completed_total_{0};
  std::atomic<std::uint64_t> failed_total_{0};
  std::atomic<std::uint64_t> cancelled_total_{0};

  std::mutex waiters_mu_;
  std::condition_variable waiters_cv_;
  std::size_t waiters_ = 0;  // blocked await_response calls
};

}  // namespace rollout

#pragma once

#include <atomic>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "rollout/clock.hpp"
#include "rollout/errors.hpp"
#include "rollout/timer.hpp"
#include "rollout/trajectory.hpp"
#include "rollout/types.hpp"

namespace rollout {

namespace sandbox {
class SandboxRuntime;
}

// One-shot latch a waiter blocks on until the job reaches a terminal state.
class CompletionEvent {
 public:
  void set() {
    {
      std::lock_guard lk{mu_};
      if (set_) return;
      set_ = true;
    }
    cv_.notify_all();
  }

  void wait() {
    std::unique_lock lk{mu_};
    cv_.wait(lk, [&] { return set_; });
  }

  template <class Rep, class Period>
  bool wait_for(std::chrono::duration<Rep, Period> d) {
    std::unique_lock lk{mu_};
    return cv_.wait_for(lk, d, [&] { return set_; });
  }

  bool is_set() {
    std::lock_guard lk{mu_};
    return set_;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  bool set_ = false;
};

struct ErrorInfo {
  Stage stage = Stage::INIT;
  std::string message;
};

// Mutable state for one rollout request as it moves through the stages.
// Stage workers are the only writers while a job is live; the API layer
// reads a consistent snapshot after `done` fires.
class Job {
 public:
  Job(std::string id, std::string task_name, nlohmann::json instance,
      SamplingParams sampling, Duration budget, std::shared_ptr<Clock> clock)
      : id_(std::move(id)),
        task_name_(std::move(task_name)),
        instance_(std::move(instance)),
        sampling_(std::move(sampling)),
        budget_(budget),
        timer_(clock),
        clock_(std::move(clock)),
        submitted_at_(clock_->now()) {}

  Job(const Job&) = delete;
  Job& operator=(const Job&) = delete;

  const std::string& id() const { return id_; }
  const std::string& task_name() const { return task_name_; }
  const nlohmann::json& instance() const { return instance_; }
  const SamplingParams& sampling() const { return sampling_; }
  Duration budget() const { return budget_; }
  PausableTimer& timer() { return timer_; }

  JobStatus status() const { return status_.load(std::memory_order_acquire); }

  // Transition into a live (non-terminal) status. Returns false if the job
  // already reached a terminal state — terminal statuses are absorbing.
  bool set_live_status(JobStatus s) {
    std::lock_guard lk{mu_};
    if (is_terminal(status_.load(std::memory_order_relaxed))) return false;
    status_.store(s, std::memory_order_release);
    return true;
  }

  // First terminal transition wins; everything after is a no-op. Fires the
  // completion event exactly once.
  bool try_terminal(JobStatus s, std::optional<ErrorInfo> err = std::nullopt) {
    if (!is_terminal(s)) throw Error{"not_terminal", "status is not terminal"};
    {
      std::lock_guard lk{mu_};
      if (is_terminal(status_.load(std::memory_order_relaxed))) return false;
      status_.store(s, std::memory_order_release);
      if (err) error_ = std::move(err);
      terminal_at_ = clock_->now();
    }
    done.set();
    return true;
  }

  void request_cancel() { cancel_requested_.store(true, std::memory_order_release); }
  bool cancel_requested() const { return cancel_requested_.load(std::memory_order_acquire); }

  // Called from handler-facing code paths between units of work.
  void throw_if_interrupted() {
    if (cancel_requested()) throw OperationCancelled{"job " + id_ + " cancelled"};
    if (timer_.expired(budget_)) throw TimeoutExpired{"job " + id_ + " exceeded budget"};
  }

  // --- trajectory ------------------------------------------------------
  void append_turn(Turn t) {
    std::lock_guard lk{mu_};
    trajectory_.append(std::move(t));
  }

  TokenTrajectory trajectory_snapshot() const {
    std::lock_guard lk{mu_};
    return trajectory_;
  }

  TokenIds flatten_prompt() const {
    std::lock_guard lk{mu_};
    return trajectory_.flatten();
  }

  // --- per-stage results ----------------------------------------------
  void set_stage_result(Stage s, nlohmann::json v) {
    std::lock_guard lk{mu_};
    stage_results_[s] = std::move(v);
  }

  std::optional<nlohmann::json> stage_result(Stage s) const {
    std::lock_guard lk{mu_};
    auto it = stage_results_.find(s);
    if (it == stage_results_.end()) return std::nullopt;
    return it->second;
  }

  // --- runtime handle ---------------------------------------------------
  void set_runtime(std::shared_ptr<sandbox::SandboxRuntime> rt) {
    std::lock_guard lk{mu_};
    runtime_ = std::move(rt);
  }

  std::shared_ptr<sandbox::SandboxRuntime> runtime() const {
    std::lock_guard lk{mu_};
    return runtime_;
  }

  std::shared_ptr<sandbox::SandboxRuntime> take_runtime() {
    std::lock_guard lk{mu_};
    return std::exchange(runtime_, nullptr);
  }

  // --- reward / error / routing ----------------------------------------
  void set_reward(double r) {
    std::lock_guard lk{mu_};
    reward_ = r;
  }

  std::optional<double> reward() const {
    std::lock_guard lk{mu_};
    return reward_;
  }

  std::optional<ErrorInfo> error() const {
    std::lock_guard lk{mu_};
    return error_;
  }

  void record_backend(const std::string& addr) {
    std::lock_guard lk{mu_};
    backend_ = addr;
  }

  std::optional<std::string> backend() const {
    std::lock_guard lk{mu_};
    return backend_;
  }

  TimePoint submitted_at() const { return submitted_at_; }

  TimePoint terminal_at() const {
    std::lock_guard lk{mu_};
    return terminal_at_;
  }

  CompletionEvent done;

 private:
  const std::string id_;
  const std::string task_name_;
  const nlohmann::json instance_;
  const SamplingParams sampling_;
  const Duration budget_;
  PausableTimer timer_;
  std::shared_ptr<Clock> clock_;
  const TimePoint submitted_at_;

  mutable std::mutex mu_;
  std::atomic<JobStatus> status_{JobStatus::PENDING};
  std::atomic<bool> cancel_requested_{false};
  TokenTrajectory trajectory_;
  std::map<Stage, nlohmann::json> stage_results_;
  std::shared_ptr<sandbox::SandboxRuntime> runtime_;
  std::optional<double> reward_;
  std::optional<ErrorInfo> error_;
  std::optional<std::string> backend_;
  TimePoint terminal_at_{};
};

using JobPtr = std::shared_ptr<Job>;

}  // namespace rollout

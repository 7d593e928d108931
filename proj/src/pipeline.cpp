#include "rollout/pipeline.hpp"

#include <utility>

namespace rollout {

// ------------------------------------------------------------ StageQueue

void StageQueue::push(std::string job_id) {
  {
    std::lock_guard lk{mu_};
    items_.push_back(std::move(job_id));
  }
  cv_.notify_one();
}

std::optional<std::string> StageQueue::pop() {
  std::unique_lock lk{mu_};
  cv_.wait(lk, [&] { return closed_ || !items_.empty(); });
  if (items_.empty()) return std::nullopt;  // closed and drained
  std::string id = std::move(items_.front());
  items_.pop_front();
  return id;
}

void StageQueue::close() {
  {
    std::lock_guard lk{mu_};
    closed_ = true;
  }
  cv_.notify_all();
}

std::size_t StageQueue::depth() const {
  std::lock_guard lk{mu_};
  return items_.size();
}

// -------------------------------------------------------------- Pipeline

Pipeline::Pipeline(const HandlerRegistry& registry, ServiceContext ctx,
                   PipelineConfig cfg)
    : registry_(registry), ctx_(std::move(ctx)), cfg_(cfg) {
  for (int w : cfg_.workers)
    if (w < 1) throw MalformedRequest{"workers per stage must be >= 1"};
}

Pipeline::~Pipeline() {
  try {
    drain_and_stop();
  } catch (...) {
  }
}

void Pipeline::start() {
  bool expected = false;
  if (!running_.compare_exchange_strong(expected, true))
    throw AlreadyStarted{"pipeline already running"};
  for (int s = 0; s < kStageCount; ++s)
    for (int i = 0; i < cfg_.workers[s]; ++i)
      workers_.emplace_back([this, s] { worker_loop(static_cast<Stage>(s)); });
}

JobPtr Pipeline::submit(const std::string& job_id, const std::string& task_name,
                        nlohmann::json payload, SamplingParams sampling,
                        std::optional<Duration> budget) {
  sampling.validate();
  // Dispatch before any mutation: UnknownTask must leave no trace.
  auto handler = std::shared_ptr<AgentHandler>{registry_.dispatch(task_name)};

  auto job = std::make_shared<Job>(job_id, task_name, std::move(payload),
                                   std::move(sampling),
                                   budget.value_or(cfg_.default_budget),
                                   ctx_.clock);
  auto rec = std::make_shared<JobRecord>(JobRecord{job, std::move(handler)});

  {
    std::lock_guard lk{table_mu_};
    if (stopping_ || !running_.load(std::memory_order_acquire))
      throw ServerStopped{"server is stopped"};
    if (!table_.emplace(job_id, rec).second)
      throw DuplicateJobId{"job_id already in use: " + job_id};
    in_flight_.fetch_add(1, std::memory_order_relaxed);
    // Enqueue under the same lock so a concurrent drain cannot slip between
    // table insert and queue push and miss this job.
    queues_[static_cast<int>(Stage::INIT)].push(job_id);
  }
  return job;
}

std::shared_ptr<Pipeline::JobRecord> Pipeline::lookup(const std::string& job_id) const {
  std::lock_guard lk{table_mu_};
  auto it = table_.find(job_id);
  return it == table_.end() ? nullptr : it->second;
}

JobPtr Pipeline::find(const std::string& job_id) const {
  auto rec = lookup(job_id);
  return rec ? rec->job : nullptr;
}

bool Pipeline::is_discarded(const std::string& job_id) const {
  std::lock_guard lk{discard_mu_};
  return discarded_.count(job_id) > 0;
}

bool Pipeline::finalize(JobRecord& rec, JobStatus status,
                        std::optional<ErrorInfo> err) {
  Job& job = *rec.job;
  if (status == JobStatus::DONE && !job.reward().has_value()) job.set_reward(0.0);
  if (!job.try_terminal(status, std::move(err))) return false;

  ctx_.backends->release_task(job.id());
  if (auto rt = job.take_runtime()) {
    try {
      rt->close();
    } catch (...) {
    }
  }
  switch (status) {
    case JobStatus::DONE: completed_total_.fetch_add(1, std::memory_order_relaxed); break;
    case JobStatus::FAILED: failed_total_.fetch_add(1, std::memory_order_relaxed); break;
    case JobStatus::CANCELLED: cancelled_total_.fetch_add(1, std::memory_order_relaxed); break;
    default: break;
  }
  in_flight_.fetch_sub(1, std::memory_order_relaxed);
  return true;
}

void Pipeline::run_stage(JobRecord& rec, Stage stage) {
  Job& job = *rec.job;
  AgentHandler& handler = *rec.handler;

  switch (stage) {
    case Stage::INIT: {
      InitResult r;
      try {
        r = handler.init(job, ctx_);
      } catch (const OperationCancelled&) {
        throw;
      } catch (const TimeoutExpired&) {
        throw;
      } catch (const std::exception& e) {
        job.set_stage_result(Stage::INIT,
                             handler.init_exception(job, ctx_, e.what()).metadata);
        throw Error{"stage_failed", std::string{e.what()}};
      }
      if (r.runtime) job.set_runtime(r.runtime);
      job.set_stage_result(Stage::INIT, r.metadata);
      break;
    }
    case Stage::RUN: {
      RunResult r;
      try {
        r = handler.run(job, ctx_);
      } catch (const OperationCancelled&) {
        throw;
      } catch (const TimeoutExpired&) {
        throw;
      } catch (const std::exception& e) {
        job.set_stage_result(Stage::RUN,
                             handler.run_exception(job, ctx_, e.what()).artifacts);
        throw Error{"stage_failed", std::string{e.what()}};
      }
      r.artifacts["truncated"] = r.truncated;
      job.set_stage_result(Stage::RUN, r.artifacts);
      break;
    }
    case Stage::EVAL: {
      EvalResult r;
      try {
        r = handler.eval(job, ctx_);
      } catch (const OperationCancelled&) {
        throw;
      } catch (const TimeoutExpired&) {
        throw;
      } catch (const std::exception& e) {
        r = handler.eval_exception(job, ctx_, e.what());
        job.set_reward(r.reward);
        job.set_stage_result(Stage::EVAL, r.details);
        throw Error{"stage_failed", std::string{e.what()}};
      }
      job.set_reward(r.reward);
      job.set_stage_result(Stage::EVAL, r.details);
      break;
    }
  }
}

void Pipeline::worker_loop(Stage stage) {
  StageQueue& queue = queues_[static_cast<int>(stage)];
  while (auto id = queue.pop()) {
    auto rec = lookup(*id);
    if (!rec) continue;
    Job& job = *rec->job;

    if (is_discarded(*id) || is_terminal(job.status())) continue;

    // Timer expiry observed at the stage boundary: short-circuit to FAILED
    // without invoking the handler.
    if (job.timer().expired(job.budget())) {
      finalize(*rec, JobStatus::FAILED,
               ErrorInfo{stage, "timeout budget exhausted before " +
                                    std::string{stage_name(stage)}});
      continue;
    }

    switch (stage) {
      case Stage::INIT: job.set_live_status(JobStatus::INIT); break;
      case Stage::RUN: job.set_live_status(JobStatus::RUN); break;
      case Stage::EVAL: job.set_live_status(JobStatus::EVAL); break;
    }

    bool cancelled = false, timed_out = false, failed = false;
    std::string failure;
    {
      PhaseScope phase{job.timer(), stage};
      // Cancel may have landed between dequeue and phase entry.
      if (is_discarded(*id) || job.cancel_requested()) {
        cancelled = true;
      } else {
        try {
          run_stage(*rec, stage);
        } catch (const OperationCancelled&) {
          cancelled = true;
        } catch (const TimeoutExpired& e) {
          timed_out = true;
          failure = e.what();
        } catch (const std::exception& e) {
          failed = true;
          failure = e.what();
        }
      }
    }

    if (cancelled) {
      finalize(*rec, JobStatus::CANCELLED);
      continue;
    }
    if (timed_out) {
      finalize(*rec, JobStatus::FAILED, ErrorInfo{stage, failure});
      continue;
    }
    if (failed) {
      // Fallback result already stored by run_stage; skip remaining stages.
      finalize(*rec, JobStatus::FAILED, ErrorInfo{stage, failure});
      continue;
    }

    // Free the container before eval starts — eval needs no sandbox and
    // holding it would serialize on the runtime pool.
    if (stage == Stage::RUN && cfg_.release_runtime_after_run) {
      if (auto rt = job.take_runtime()) {
        try {
          rt->close();
        } catch (...) {
        }
      }
    }

    if (auto next = next_stage(stage)) {
      queues_[static_cast<int>(*next)].push(*id);
    } else {
      finalize(*rec, JobStatus::DONE);
    }
  }
}

nlohmann::json Pipeline::await_response(const std::string& job_id) {
  auto rec = lookup(job_id);
  if (!rec) throw UnknownJob{"no such job: " + job_id};

  {
    std::lock_guard lk{waiters_mu_};
    ++waiters_;
  }
  rec->job->done.wait();
  nlohmann::json response = rec->handler->final_result(*rec->job, ctx_);
  {
    std::lock_guard lk{waiters_mu_};
    --waiters_;
  }
  waiters_cv_.notify_all();
  return response;
}

void Pipeline::cancel(const std::string& job_id) {
  auto rec = lookup(job_id);
  if (!rec) throw UnknownJob{"no such job: " + job_id};
  Job& job = *rec->job;
  if (is_terminal(job.status())) return;  // no-op acknowledgment

  {
    std::lock_guard lk{discard_mu_};
    discarded_.insert(job_id);
  }
  job.request_cancel();
  if (auto rt = job.runtime()) {
    try {
      rt->close();  // aborts any in-flight action
    } catch (...) {
    }
  }
  finalize(*rec, JobStatus::CANCELLED);
}

void Pipeline::drain_and_stop() {
  if (!running_.exchange(false)) return;

  // Stop intake, then snapshot. Any submit after this sees ServerStopped.
  std::vector<std::string> live;
  {
    std::lock_guard lk{table_mu_};
    stopping_ = true;
    for (const auto& [id, rec] : table_)
      if (!is_terminal(rec->job->status())) live.push_back(id);
  }

  for (const auto& id : live) {
    try {
      cancel(id);
    } catch (const UnknownJob&) {
    }
  }

  // Every blocked /process must compose its response before stop returns.
  {
    std::unique_lock lk{waiters_mu_};
    waiters_cv_.wait(lk, [&] { return waiters_ == 0; });
  }

  for (auto& q : queues_) q.close();
  for (auto& w : workers_) w.join();
  workers_.clear();

  // Belt and braces: close anything a worker re-attached mid-race.
  std::lock_guard lk{table_mu_};
  for (auto& [id, rec] : table_) {
    if (auto rt = rec->job->take_runtime()) {
      try {
        rt->close();
      } catch (...) {
      }
    }
  }
}

StatusSnapshot Pipeline::status() const {
  StatusSnapshot s;
  s.running = running_.load(std::memory_order_acquire);
  for (int i = 0; i < kStageCount; ++i) s.queue_depths[i] = queues_[i].depth();
  s.in_flight = in_flight_.load(std::memory_order_relaxed);
  s.completed_total = completed_total_.load(std::memory_order_relaxed);
  s.failed_total = failed_total_.load(std::memory_order_relaxed);
  s.cancelled_total = cancelled_total_.load(std::memory_order_relaxed);
  return s;
}

}  // namespace rollout

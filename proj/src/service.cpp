#include "rollout/service.hpp"

#include <unistd.h>

#include <filesystem>
#include <random>

#include "rollout/serde.hpp"

namespace rollout {

namespace {

std::string default_runtime_dir() {
  static std::atomic<std::uint64_t> counter{0};
  auto base = std::filesystem::temp_directory_path();
  return (base / ("rolloutd-" + std::to_string(::getpid()) + "-" +
                  std::to_string(counter.fetch_add(1))))
      .string();
}

std::string random_job_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx",
                static_cast<unsigned long long>(rng()),
                static_cast<unsigned long long>(rng()));
  return buf;
}

backend::PoolConfig pool_config_from(const ServiceConfig& cfg) {
  backend::PoolConfig pc;
  pc.retry_budget = from_seconds(cfg.retry_budget_seconds);
  return pc;
}

}  // namespace

RolloutService::RolloutService(ServiceConfig cfg)
    : cfg_(std::move(cfg)),
      clock_(steady_clock_source()),
      sandbox_(std::make_unique<sandbox::SandboxHost>(
          cfg_.runtime_dir.empty() ? default_runtime_dir() : cfg_.runtime_dir,
          static_cast<std::uint32_t>(cfg_.address_capacity))),
      pool_(pool_config_from(cfg_), clock_) {
  sandbox::RuntimeSpec spec;
  spec.grace = from_seconds(cfg_.grace_seconds);
  sandbox_->set_default_spec(spec);
  install_builtin_handlers(registry_);
}

RolloutService::~RolloutService() {
  try {
    if (running()) stop();
  } catch (...) {
  }
}

bool RolloutService::running() const {
  std::lock_guard lk{lifecycle_mu_};
  return pipeline_ != nullptr;
}

void RolloutService::start() {
  std::lock_guard lk{lifecycle_mu_};
  if (pipeline_) throw AlreadyStarted{"service already started"};

  ServiceContext ctx;
  ctx.clock = clock_;
  ctx.sandbox = sandbox_.get();
  ctx.backends = &pool_;

  PipelineConfig pc;
  pc.workers = {cfg_.workers_init, cfg_.workers_run, cfg_.workers_eval};
  pc.default_budget = from_seconds(cfg_.default_timeout_seconds);
  pc.release_runtime_after_run = cfg_.release_runtime_after_run;

  auto pipeline = std::make_shared<Pipeline>(registry_, ctx, pc);
  pipeline->start();
  pipeline_ = std::move(pipeline);
}

void RolloutService::stop() {
  // Move the pipeline out under the lock, drain outside it: blocked
  // /process calls must be able to finish composing their responses. Those
  // calls hold their own shared_ptr, so destruction waits for the last one.
  std::shared_ptr<Pipeline> pipeline;
  {
    std::lock_guard lk{lifecycle_mu_};
    if (!pipeline_) throw NotStarted{"service is not started"};
    pipeline = std::move(pipeline_);
    pipeline_.reset();
  }
  pipeline->drain_and_stop();
}

nlohmann::json RolloutService::process(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("task_name") ||
      !body["task_name"].is_string() ||
      body["task_name"].get<std::string>().empty())
    throw MalformedRequest{"task_name must be a nonempty string"};
  std::string task_name = body["task_name"].get<std::string>();

  nlohmann::json payload = nlohmann::json::object();
  if (body.contains("instance")) {
    if (!body["instance"].is_object())
      throw MalformedRequest{"instance must be an object"};
    payload = body["instance"];
  }

  std::string job_id;
  if (body.contains("job_id")) {
    if (!body["job_id"].is_string() || body["job_id"].get<std::string>().empty())
      throw MalformedRequest{"job_id must be a nonempty string"};
    job_id = body["job_id"].get<std::string>();
  } else {
    job_id = random_job_id();
  }

  std::optional<Duration> budget;
  if (body.contains("timeout_seconds")) {
    if (!body["timeout_seconds"].is_number() ||
        body["timeout_seconds"].get<double>() <= 0)
      throw MalformedRequest{"timeout_seconds must be a positive number"};
    budget = from_seconds(body["timeout_seconds"].get<double>());
  }

  SamplingParams sampling;
  if (body.contains("sampling_params")) {
    if (!body["sampling_params"].is_object())
      throw MalformedRequest{"sampling_params must be an object"};
    sampling = body["sampling_params"].get<SamplingParams>();
  }

  // Hold a reference across the whole long poll; a concurrent stop() drains
  // and the response still composes.
  std::shared_ptr<Pipeline> pipeline;
  {
    std::lock_guard lk{lifecycle_mu_};
    if (!pipeline_) throw ServerStopped{"server is stopped"};
    pipeline = pipeline_;
  }
  pipeline->submit(job_id, task_name, std::move(payload), std::move(sampling), budget);
  return pipeline->await_response(job_id);
}

nlohmann::json RolloutService::cancel_job(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("job_id") || !body["job_id"].is_string())
    throw MalformedRequest{"body must carry a job_id string"};
  std::string job_id = body["job_id"].get<std::string>();

  std::shared_ptr<Pipeline> pipeline;
  {
    std::lock_guard lk{lifecycle_mu_};
    if (!pipeline_) throw UnknownJob{"no such job: " + job_id};
    pipeline = pipeline_;
  }
  pipeline->cancel(job_id);
  return {{"job_id", job_id}, {"acknowledged", true}};
}

nlohmann::json RolloutService::add_llm_server(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("address") || !body["address"].is_string())
    throw MalformedRequest{"body must carry an address string"};
  pool_.add_backend(body["address"].get<std::string>());
  return backends_summary();
}

nlohmann::json RolloutService::clear_llm_server() {
  pool_.clear_backends();
  return backends_summary();
}

nlohmann::json RolloutService::backends_summary() const {
  nlohmann::json backends = nlohmann::json::array();
  for (const auto& [address, counter] : pool_.snapshot())
    backends.push_back({{"address", address}, {"counter", counter}});
  return {{"backends", std::move(backends)}};
}

nlohmann::json RolloutService::status() {
  StatusSnapshot snap;
  {
    std::lock_guard lk{lifecycle_mu_};
    if (pipeline_) snap = pipeline_->status();
  }
  nlohmann::json backends = nlohmann::json::array();
  for (const auto& [address, counter] : pool_.snapshot())
    backends.push_back({{"address", address}, {"counter", counter}});

  return {{"running", snap.running},
          {"queue_depths",
           {{"init", snap.queue_depths[0]},
            {"run", snap.queue_depths[1]},
            {"eval", snap.queue_depths[2]}}},
          {"in_flight", snap.in_flight},
          {"backends", std::move(backends)},
          {"completed_total", snap.completed_total},
          {"failed_total", snap.failed_total},
          {"cancelled_total", snap.cancelled_total}};
}

}  // namespace rollout

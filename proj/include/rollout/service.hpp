#pragma once

#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "rollout/backend_pool.hpp"
#include "rollout/config.hpp"
#include "rollout/handler.hpp"
#include "rollout/pipeline.hpp"
#include "rollout/sandbox/runtime.hpp"

namespace rollout {

// Everything behind the HTTP surface, callable in-process so integration
// tests can drive the exact endpoint semantics without sockets. The backend
// pool and sandbox host outlive start/stop cycles; the pipeline is rebuilt
// fresh on every start.
class RolloutService {
 public:
  explicit RolloutService(ServiceConfig cfg);
  ~RolloutService();

  RolloutService(const RolloutService&) = delete;
  RolloutService& operator=(const RolloutService&) = delete;

  void start();  // AlreadyStarted
  void stop();   // NotStarted; drains the pipeline before returning
  bool running() const;

  // Endpoint bodies. Each takes/returns the wire JSON and throws
  // rollout::Error subtypes that the HTTP layer maps to status codes.
  nlohmann::json process(const nlohmann::json& body);  // blocks until terminal
  nlohmann::json cancel_job(const nlohmann::json& body);
  nlohmann::json add_llm_server(const nlohmann::json& body);
  nlohmann::json clear_llm_server();
  nlohmann::json status();

  const ServiceConfig& config() const { return cfg_; }
  HandlerRegistry& registry() { return registry_; }
  backend::BackendPool& backends() { return pool_; }
  sandbox::SandboxHost& sandbox() { return *sandbox_; }

 private:
  ServiceConfig cfg_;
  std::shared_ptr<Clock> clock_;
  std::unique_ptr<sandbox::SandboxHost> sandbox_;
  backend::BackendPool pool_;
  HandlerRegistry registry_;

  nlohmann::json backends_summary() const;

  mutable std::mutex lifecycle_mu_;
  // shared_ptr: long-poll handlers hold a reference across a concurrent
  // stop(), which swaps this out and drains before the object dies.
  std::shared_ptr<Pipeline> pipeline_;
};

}  // namespace rollout

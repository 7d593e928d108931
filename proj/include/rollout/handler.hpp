#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rollout/backend_pool.hpp"
#include "rollout/clock.hpp"
#include "rollout/errors.hpp"
#include "rollout/job.hpp"
#include "rollout/sandbox/runtime.hpp"

namespace rollout {

// Shared service plumbing handed to every handler invocation.
struct ServiceContext {
  std::shared_ptr<Clock> clock;
  sandbox::SandboxHost* sandbox = nullptr;
  backend::BackendPool* backends = nullptr;
};

struct HandlerConfig {
  int max_turns = 8;
  std::vector<std::string> tool_set;
};

struct InitResult {
  std::shared_ptr<sandbox::SandboxRuntime> runtime;  // may be null for tool-less tasks
  nlohmann::json metadata;
  HandlerConfig config;
};

struct RunResult {
  nlohmann::json artifacts;
  bool truncated = false;  // max_turns hit before a finish directive
};

struct EvalResult {
  double reward = 0.0;
  nlohmann::json details;
};

// Task lifecycle plug-in. One instance serves exactly one job; factories
// hand out a fresh instance per dispatch, so handlers may keep per-job
// state in members without locking.
class AgentHandler {
 public:
  virtual ~AgentHandler() = default;

  // Provision environment; return (runtime, metadata, config).
  virtual InitResult init(Job& job, ServiceContext& ctx) = 0;
  // Execute agent loop; return artifacts.
  virtual RunResult run(Job& job, ServiceContext& ctx) = 0;
  // Score output; return reward signal.
  virtual EvalResult eval(Job& job, ServiceContext& ctx) = 0;

  // Fallback paths. Must be total: never throw, always hand back something
  // the rest of the pipeline can serialize.
  virtual InitResult init_exception(Job& job, ServiceContext& ctx,
                                    const std::string& message) noexcept;
  virtual RunResult run_exception(Job& job, ServiceContext& ctx,
                                  const std::string& message) noexcept;
  virtual EvalResult eval_exception(Job& job, ServiceContext& ctx,
                                    const std::string& message) noexcept;

  // Composes the wire response for a terminal job. Total; the default
  // builds the canonical schema via build_process_response.
  virtual nlohmann::json final_result(Job& job, ServiceContext& ctx) noexcept;
};

// Canonical response body: job_id, status, reward, trajectory, per-stage
// timings, error info if any. Well-formed for every terminal status.
nlohmann::json build_process_response(Job& job);

using HandlerFactory = std::function<std::unique_ptr<AgentHandler>()>;

class HandlerRegistry {
 public:
  // Throws DuplicateName on re-registration, MalformedRequest on empty name.
  void register_handler(const std::string& name, HandlerFactory factory);

  // Fresh instance per call. Throws UnknownTask.
  std::unique_ptr<AgentHandler> dispatch(const std::string& name) const;

  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, HandlerFactory> factories_;
};

// Registers the built-in synthetic tasks: "echo", "arith", "sleepy".
void install_builtin_handlers(HandlerRegistry& registry);

// ---- assistant-text action grammar ------------------------------------
// Single-line directives embedded in assistant output:
//   @@tool <name> <json-args>@@
//   @@finish <answer>@@
struct Directive {
  enum class Kind { TOOL, FINISH } kind = Kind::FINISH;
  std::string tool_name;      // TOOL only
  nlohmann::json args;        // TOOL only
  std::string answer;         // FINISH only
};

// Scans `text` for the first directive. Returns nullopt when none parses.
std::optional<Directive> parse_directive(const std::string& text);

}  // namespace rollout

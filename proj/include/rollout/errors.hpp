#pragma once

#include <stdexcept>
#include <string>

namespace rollout {

// Base for every domain error the service raises. `code()` is a stable
// machine-readable tag used by the HTTP layer to pick status codes.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error(msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

#define ROLLOUT_DEFINE_ERROR(Name, code_str)                      \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& msg = code_str)              \
        : Error(code_str, msg) {}                                 \
  }

// core-model
ROLLOUT_DEFINE_ERROR(PhaseAlreadyActive, "phase_already_active");
ROLLOUT_DEFINE_ERROR(NoActivePhase, "no_active_phase");
ROLLOUT_DEFINE_ERROR(MalformedTurn, "malformed_turn");
ROLLOUT_DEFINE_ERROR(TimeoutExpired, "timeout_expired");
ROLLOUT_DEFINE_ERROR(OperationCancelled, "operation_cancelled");

// handler framework
ROLLOUT_DEFINE_ERROR(DuplicateName, "duplicate_name");
ROLLOUT_DEFINE_ERROR(UnknownTask, "unknown_task");

// sandbox
ROLLOUT_DEFINE_ERROR(PoolExhausted, "pool_exhausted");
ROLLOUT_DEFINE_ERROR(StartupTimeout, "startup_timeout");
ROLLOUT_DEFINE_ERROR(ActionTimeout, "action_timeout");
ROLLOUT_DEFINE_ERROR(RuntimeClosed, "runtime_closed");

// backend pool
ROLLOUT_DEFINE_ERROR(MalformedAddress, "malformed_address");
ROLLOUT_DEFINE_ERROR(DuplicateAddress, "duplicate_address");
ROLLOUT_DEFINE_ERROR(NoBackendAvailable, "no_backend_available");
ROLLOUT_DEFINE_ERROR(BackendUnreachable, "backend_unreachable");

// pipeline / api
ROLLOUT_DEFINE_ERROR(UnknownJob, "unknown_job");
ROLLOUT_DEFINE_ERROR(ServerStopped, "server_stopped");
ROLLOUT_DEFINE_ERROR(DuplicateJobId, "duplicate_job_id");
ROLLOUT_DEFINE_ERROR(MalformedRequest, "malformed_request");
ROLLOUT_DEFINE_ERROR(AlreadyStarted, "already_started");
ROLLOUT_DEFINE_ERROR(NotStarted, "not_started");

// trainer
ROLLOUT_DEFINE_ERROR(IncompleteGroup, "incomplete_group");

#undef ROLLOUT_DEFINE_ERROR

}  // namespace rollout

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rollout/clock.hpp"
#include "rollout/errors.hpp"
#include "rollout/types.hpp"

namespace rollout::backend {

// "http://host:port" → {host, port}. Throws MalformedAddress.
std::pair<std::string, int> parse_http_address(const std::string& address);

struct GenerateResult {
  TokenIds output_ids;
  std::vector<double> logprobs;
  std::string finish_reason;  // "stop" or "length"
  std::string address;        // backend that served this call
};

struct PoolConfig {
  Duration retry_budget = std::chrono::seconds{30};
  Duration backoff_base = std::chrono::milliseconds{100};
  Duration backoff_cap = std::chrono::seconds{2};
  Duration connect_timeout = std::chrono::seconds{2};
  Duration read_timeout = std::chrono::seconds{120};
};

// Registered inference backends with least-assigned routing. One mutex
// guards the heap, the counters, and the job→backend stickiness map as a
// unit; HTTP I/O happens outside it.
class BackendPool {
 public:
  explicit BackendPool(PoolConfig cfg = {},
                       std::shared_ptr<Clock> clock = steady_clock_source());

  // Inserts with counter 0, immediately routable. Throws MalformedAddress /
  // DuplicateAddress.
  void add_backend(const std::string& address);

  // Empties the pool and invalidates every sticky assignment: in-flight
  // jobs re-resolve against whatever is registered by their next call.
  void clear_backends();

  // Sticky argmin selection: the first call for a job pops the least-loaded
  // backend (FIFO among ties), bumps its counter once, and pins the job to
  // it; later calls return the pinned address untouched. Throws
  // NoBackendAvailable immediately when the pool is empty — the patient
  // retry loop lives in generate().
  std::string assign_task(const std::string& job_id);

  // Drops the sticky entry (jobs going terminal, or a failed backend).
  void release_task(const std::string& job_id);

  // Full call path: resolve a backend, POST the prompt, return the response
  // verbatim. Empty pools and connection failures are retried with
  // exponential backoff until the retry budget elapses, re-resolving the
  // backend after each failure; then NoBackendAvailable. `cancelled` is
  // polled between attempts to bail out early (throws OperationCancelled).
  GenerateResult generate(const std::string& job_id, const TokenIds& prompt_ids,
                          const SamplingParams& params,
                          const std::function<bool()>& cancelled = {});

  // (address, counter) pairs in insertion order, for /status.
  std::vector<std::pair<std::string, std::uint64_t>> snapshot() const;

  std::size_t size() const;

 private:
  struct Entry {
    std::string address;
    std::uint64_t counter = 0;
    std::uint64_t seq = 0;  // insertion order, breaks counter ties
  };

  struct Assignment {
    std::string address;
    std::uint64_t epoch = 0;
  };

  // Binary min-heap keyed by (counter, seq); root = next assignment target.
  static bool less(const Entry& a, const Entry& b) {
    return a.counter != b.counter ? a.counter < b.counter : a.seq < b.seq;
  }
  void sift_up(std::size_t i);
  void sift_down(std::size_t i);

  std::string assign_locked(const std::string& job_id);

  PoolConfig cfg_;
  std::shared_ptr<Clock> clock_;

  mutable std::mutex mu_;
  std::vector<Entry> heap_;
  std::unordered_map<std::string, Assignment> assignments_;
  std::uint64_t next_seq_ = 0;
  std::uint64_t epoch_ = 0;  // bumped by clear_backends
};

}  // namespace rollout::backend

#include "rollout/backend_pool.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rollout/serde.hpp"

namespace rollout::backend {

std::pair<std::string, int> parse_http_address(const std::string& address) {
  const std::string prefix = "http://";
  if (address.rfind(prefix, 0) != 0)
    throw MalformedAddress{"address must start with http://: " + address};
  std::string rest = address.substr(prefix.size());
  auto slash = rest.find('/');
  if (slash != std::string::npos) rest = rest.substr(0, slash);
  auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size())
    throw MalformedAddress{"address needs host:port: " + address};
  std::string host = rest.substr(0, colon);
  std::string port_str = rest.substr(colon + 1);
  for (char c : port_str)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw MalformedAddress{"non-numeric port in " + address};
  int port = std::atoi(port_str.c_str());
  if (port < 1 || port > 65535)
    throw MalformedAddress{"port out of range in " + address};
  return {host, port};
}

BackendPool::BackendPool(PoolConfig cfg, std::shared_ptr<Clock> clock)
    : cfg_(cfg), clock_(std::move(clock)) {}

void BackendPool::sift_up(std::size_t i) {
  while (i > 0) {
    std::size_t parent = (i - 1) / 2;
    if (!less(heap_[i], heap_[parent])) break;
    std::swap(heap_[i], heap_[parent]);
    i = parent;
  }
}

void BackendPool::sift_down(std::size_t i) {
  const std::size_t n = heap_.size();
  for (;;) {
    std::size_t left = 2 * i + 1, right = 2 * i + 2, smallest = i;
    if (left < n && less(heap_[left], heap_[smallest])) smallest = left;
    if (right < n && less(heap_[right], heap_[smallest])) smallest = right;
    if (smallest == i) break;
    std::swap(heap_[i], heap_[smallest]);
    i = smallest;
  }
}

void BackendPool::add_backend(const std::string& address) {
  parse_http_address(address);  // validates
  std::lock_guard lk{mu_};
  for (const auto& e : heap_)
    if (e.address == address)
      throw DuplicateAddress{"backend already registered: " + address};
  heap_.push_back(Entry{address, 0, next_seq_++});
  sift_up(heap_.size() - 1);
}

void BackendPool::clear_backends() {
  std::lock_guard lk{mu_};
  heap_.clear();
  ++epoch_;  // sticky assignments from the old pool re-resolve on next use
}

std::string BackendPool::assign_locked(const std::string& job_id) {
  if (auto it = assignments_.find(job_id);
      it != assignments_.end() && it->second.epoch == epoch_)
    return it->second.address;
  if (heap_.empty()) throw NoBackendAvailable{"backend pool is empty"};

  Entry e = heap_[0];
  std::swap(heap_[0], heap_.back());
  heap_.pop_back();
  if (!heap_.empty()) sift_down(0);
  e.counter += 1;
  heap_.push_back(e);
  sift_up(heap_.size() - 1);

  assignments_[job_id] = Assignment{e.address, epoch_};
  return e.address;
}

std::string BackendPool::assign_task(const std::string& job_id) {
  std::lock_guard lk{mu_};
  return assign_locked(job_id);
}

void BackendPool::release_task(const std::string& job_id) {
  std::lock_guard lk{mu_};
  assignments_.erase(job_id);
}

std::vector<std::pair<std::string, std::uint64_t>> BackendPool::snapshot() const {
  std::lock_guard lk{mu_};
  std::vector<Entry> entries = heap_;
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.seq < b.seq; });
  std::vector<std::pair<std::string, std::uint64_t>> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.emplace_back(e.address, e.counter);
  return out;
}

std::size_t BackendPool::size() const {
  std::lock_guard lk{mu_};
  return heap_.size();
}

namespace {

GenerateResult http_generate(const std::string& address, const TokenIds& prompt_ids,
                             const SamplingParams& params, const PoolConfig& cfg) {
  httplib::Client cli(address);
  auto to_secs_usecs = [](Duration d) {
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(d).count();
    return std::pair<time_t, long>{us / 1000000, static_cast<long>(us % 1000000)};
  };
  auto [cs, cus] = to_secs_usecs(cfg.connect_timeout);
  cli.set_connection_timeout(cs, cus);
  auto [rs, rus] = to_secs_usecs(cfg.read_timeout);
  cli.set_read_timeout(rs, rus);
  cli.set_write_timeout(rs, rus);

  nlohmann::json body = {{"prompt_ids", prompt_ids}, {"sampling_params", params}};
  auto res = cli.Post("/v1/generate", body.dump(), "application/json");
  if (!res)
    throw BackendUnreachable{"no response from " + address + " (" +
                             httplib::to_string(res.error()) + ")"};
  if (res->status >= 500)
    throw BackendUnreachable{address + " returned " + std::to_string(res->status)};
  if (res->status != 200)
    throw MalformedRequest{address + " rejected generate: " + std::to_string(res->status) +
                           " " + res->body};

  nlohmann::json j = nlohmann::json::parse(res->body);
  GenerateResult out;
  out.output_ids = j.at("output_ids").get<TokenIds>();
  out.logprobs = j.at("logprobs").get<std::vector<double>>();
  out.finish_reason = j.at("finish_reason").get<std::string>();
  out.address = address;
  if (out.output_ids.size() != out.logprobs.size())
    throw BackendUnreachable{address + " returned misaligned logprobs"};
  return out;
}

}  // namespace

GenerateResult BackendPool::generate(const std::string& job_id,
                                     const TokenIds& prompt_ids,
                                     const SamplingParams& params,
                                     const std::function<bool()>& cancelled) {
  if (prompt_ids.empty()) throw MalformedRequest{"prompt_ids must be nonempty"};

  const TimePoint deadline = clock_->now() + cfg_.retry_budget;
  Duration backoff = cfg_.backoff_base;
  std::string last_error = "backend pool is empty";

  for (;;) {
    if (cancelled && cancelled())
      throw OperationCancelled{"generate cancelled for job " + job_id};

    std::string address;
    try {
      address = assign_task(job_id);
    } catch (const NoBackendAvailable& e) {
      last_error = e.what();
    }

    if (!address.empty()) {
      try {
        return http_generate(address, prompt_ids, params, cfg_);
      } catch (const BackendUnreachable& e) {
        last_error = e.what();
        release_task(job_id);  // re-resolve next attempt
      }
    }

    if (clock_->now() >= deadline)
      throw NoBackendAvailable{"no backend served job " + job_id +
                               " within the retry budget: " + last_error};

    // Sleep in slices so cancellation stays responsive mid-backoff.
    Duration remaining = backoff;
    while (remaining > Duration{0}) {
      if (cancelled && cancelled())
        throw OperationCancelled{"generate cancelled for job " + job_id};
      Duration slice = std::min(remaining, Duration{std::chrono::milliseconds{50}});
      std::this_thread::sleep_for(slice);
      remaining -= slice;
    }
    backoff = std::min(backoff * 2, cfg_.backoff_cap);
  }
}

}  // namespace rollout::backend

#include "rollout/trainer/harness.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "rollout/backend_pool.hpp"
#include "rollout/errors.hpp"

namespace rollout::train {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

// ---- hierarchical assignment -----------------------------------------------

AssignmentTable hierarchical_assign(const std::vector<std::string>& servers,
                                    const std::vector<std::string>& backends) {
  if (servers.empty()) throw MalformedRequest{"no rollout servers to assign to"};

  AssignmentTable table;
  std::vector<std::string> sorted = servers;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i] == sorted[i - 1]) {
      throw DuplicateAddress{"duplicate rollout server " + sorted[i]};
    }
  }

  // host IP → servers on that host, in address order
  std::map<std::string, std::vector<std::string>> by_host;
  for (const auto& s : sorted) {
    table.by_server[s];  // every server gets a row, even if it ends up empty
    by_host[backend::parse_http_address(s).first].push_back(s);
  }

  std::map<std::string, std::size_t> host_rr;
  std::vector<std::string> unmatched;
  for (const auto& b : backends) {
    auto host = backend::parse_http_address(b).first;
    auto it = by_host.find(host);
    if (it == by_host.end()) {
      unmatched.push_back(b);
      continue;
    }
    auto& candidates = it->second;
    table.by_server[candidates[host_rr[host]++ % candidates.size()]].push_back(b);
  }

  std::size_t rr = 0;
  for (const auto& b : unmatched) {
    table.by_server[sorted[rr++ % sorted.size()]].push_back(b);
  }
  return table;
}

// ---- prompt groups ----------------------------------------------------------

int PromptGroup::completed_count() const {
  int c = 0;
  for (const auto& o : outcomes) {
    if (o.has_value()) ++c;
  }
  return c;
}

bool PromptGroup::complete() const {
  return n > 0 && completed_count() == n;
}

std::vector<double> PromptGroup::usable_rewards() const {
  std::vector<double> r;
  for (const auto& o : outcomes) {
    if (o.has_value() && o->status != "FAILED") r.push_back(o->reward);
  }
  return r;
}

bool is_informative(const PromptGroup& g, double tolerance) {
  if (!g.complete()) {
    throw IncompleteGroup{"group " + g.prompt_id + " has " +
                          std::to_string(g.completed_count()) + "/" +
                          std::to_string(g.n) + " outcomes"};
  }
  auto rewards = g.usable_rewards();
  if (rewards.size() < 2) return false;
  auto [mn, mx] = std::minmax_element(rewards.begin(), rewards.end());
  return (*mx - *mn) > tolerance;
}

// ---- harness ----------------------------------------------------------------

struct TrainerHarness::Dispatch {
  PromptGroup group;
  const PromptSpec* spec = nullptr;
  std::size_t server_idx = 0;
  bool cancel_requested = false;
  bool resolved = false;
  int outstanding = 0;                    // rollout threads not yet returned
  std::vector<std::string> live_job_ids;  // by slot; empty = none in flight
};

TrainerHarness::TrainerHarness(std::vector<std::string> server_addresses,
                               TrainerOptions opts)
    : servers_(std::move(server_addresses)), opts_(std::move(opts)) {
  if (servers_.empty()) throw MalformedRequest{"at least one rollout server required"};
  for (const auto& s : servers_) backend::parse_http_address(s);
  if (opts_.job_timeout_seconds <= 0) {
    throw MalformedRequest{"job_timeout_seconds must be positive"};
  }
  if (!opts_.ledger_path.empty()) {
    ledger_.open(opts_.ledger_path, std::ios::trunc);
    if (!ledger_) throw Error{"ledger_io", "cannot open " + opts_.ledger_path};
  }
  // Servers keep terminal jobs in their tables; two harnesses pointed at the
  // same server must not reuse ids.
  std::random_device rd;
  char tag[16];
  std::snprintf(tag, sizeof tag, "%08x", rd());
  run_tag_ = tag;
}

TrainerHarness::~TrainerHarness() = default;

IterationStats TrainerHarness::run_iteration_batch(const Workload& w,
                                                   IterationPlan plan) {
  return run_iteration(w, std::move(plan), /*async=*/false);
}

IterationStats TrainerHarness::run_iteration_async(const Workload& w,
                                                   IterationPlan plan) {
  return run_iteration(w, std::move(plan), /*async=*/true);
}

std::vector<PromptGroup> TrainerHarness::take_groups(const Workload& w,
                                                     IterationPlan& plan,
                                                     int count) {
  std::vector<PromptGroup> out;
  while (static_cast<int>(out.size()) < count && !plan.carryover.empty()) {
    out.push_back(std::move(plan.carryover.front()));
    plan.carryover.erase(plan.carryover.begin());
  }
  while (static_cast<int>(out.size()) < count && cursor_ < w.prompts.size()) {
    const auto& spec = w.prompts[cursor_++];
    PromptGroup g;
    g.prompt_id = spec.prompt_id;
    g.payload = spec.payload;
    g.n = w.rollouts_per_prompt;
    g.outcomes.assign(static_cast<std::size_t>(g.n), std::nullopt);
    out.push_back(std::move(g));
  }
  return out;
}

IterationStats TrainerHarness::run_iteration(const Workload& w,
                                             IterationPlan plan, bool async) {
  if (plan.target_informative < 1 || plan.concurrency_cap < 1) {
    throw MalformedRequest{"target_informative and concurrency_cap must be >= 1"};
  }
  const int target = plan.target_informative;
  const int cap = plan.concurrency_cap;
  const int iteration = ++iteration_;

  std::unordered_map<std::string, const PromptSpec*> spec_by_id;
  for (const auto& p : w.prompts) spec_by_id[p.prompt_id] = &p;

  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::unique_ptr<Dispatch>> active;
  std::vector<std::thread> threads;
  IterationStats stats;
  int informative_count = 0;
  int in_flight = 0;           // admitted groups not yet resolved
  int total_outstanding = 0;   // rollout threads not yet returned
  bool stop_requested = false;
  bool exhausted = false;
  std::size_t rr_server = 0;
  std::string abort_code, abort_message;

  const auto start = std::chrono::steady_clock::now();
  auto last_event = start;
  bool idle_active = false;
  double idle_accum = 0.0;
  auto idle_tick = [&] {
    auto now = std::chrono::steady_clock::now();
    if (idle_active) idle_accum += std::chrono::duration<double>(now - last_event).count();
    last_event = now;
    idle_active = (in_flight < cap) && (informative_count < target) &&
                  !stop_requested && abort_code.empty();
  };

  auto write_ledger = [&](const PromptGroup& g, int slot,
                          const RolloutOutcome& o) {
    if (!ledger_.is_open()) return;
    nlohmann::json line = {{"iteration", iteration}, {"prompt_id", g.prompt_id},
                           {"rollout_index", slot},  {"reward", o.reward},
                           {"wall_time", o.wall_seconds}, {"address", o.address}};
    std::lock_guard<std::mutex> lg(ledger_mu_);
    ledger_ << line.dump() << '\n';
    ledger_.flush();
  };

  // Launch one blocking /process per empty slot of `d`.
  auto issue_group = [&](Dispatch* d) {
    d->group.state = GroupState::IN_FLIGHT;
    const std::string server = servers_[d->server_idx];
    for (int i = 0; i < d->group.n; ++i) {
      auto slot = static_cast<std::size_t>(i);
      if (d->group.outcomes[slot].has_value() || !d->live_job_ids[slot].empty()) {
        continue;
      }
      std::string job_id = "job-" + run_tag_ + "-" +
                           std::to_string(next_job_serial_++) + "-" +
                           d->group.prompt_id + "-" + std::to_string(i);
      d->live_job_ids[slot] = job_id;
      ++d->outstanding;
      ++total_outstanding;
      ++stats.rollouts_issued;

      nlohmann::json instance = d->spec->payload.is_object()
                                    ? d->spec->payload
                                    : nlohmann::json::object();
      instance["run_ms"] = d->spec->latency_ms[slot];
      instance["reward"] = d->spec->rewards[slot];
      nlohmann::json body = {{"task_name", "sleepy"},
                             {"job_id", job_id},
                             {"timeout_seconds", opts_.job_timeout_seconds},
                             {"instance", std::move(instance)},
                             {"sampling_params", nlohmann::json::object()}};

      threads.emplace_back([&, d, i, slot, server, job_id,
                            body = std::move(body)] {
        auto t0 = std::chrono::steady_clock::now();
        nlohmann::json response;
        bool ok = false;
        try {
          RolloutClient client(server,
                               std::chrono::duration_cast<Duration>(
                                   std::chrono::duration<double>(
                                       opts_.job_timeout_seconds + 30.0)));
          response = client.process(body);
          ok = true;
        } catch (const std::exception&) {
          // recorded as FAILED below unless the group was cancelled
        }
        double wall = seconds_since(t0);

        std::lock_guard<std::mutex> lg(mu);
        d->live_job_ids[slot].clear();
        std::string status = ok ? response.value("status", "FAILED") : "FAILED";
        bool record = true;
        if (ok && status == "CANCELLED") record = false;      // slot re-issues later
        if (!ok && d->cancel_requested) record = false;
        if (record) {
          RolloutOutcome o;
          o.reward = ok ? response.value("reward", 0.0) : 0.0;
          o.status = status;
          o.address = ok ? response.value("backend", "") : "";
          o.wall_seconds = wall;
          d->group.outcomes[slot] = o;
          write_ledger(d->group, i, o);
        }
        --d->outstanding;
        --total_outstanding;
        cv.notify_all();
      });
    }
  };

  auto admit = [&](PromptGroup&& g) {
    auto it = spec_by_id.find(g.prompt_id);
    if (it == spec_by_id.end()) {
      throw MalformedRequest{"carryover prompt " + g.prompt_id +
                             " not present in workload"};
    }
    auto d = std::make_unique<Dispatch>();
    d->group = std::move(g);
    d->spec = it->second;
    d->server_idx = rr_server++ % servers_.size();
    d->live_job_ids.assign(static_cast<std::size_t>(d->group.n), {});
    Dispatch* raw = d.get();
    active.push_back(std::move(d));
    ++in_flight;
    issue_group(raw);
  };

  std::deque<PromptGroup> wave_pending;  // batch mode admission queue

  std::unique_lock<std::mutex> lk(mu);
  idle_tick();
  while (true) {
    // Resolve groups whose rollouts have all returned.
    for (auto& dp : active) {
      Dispatch* d = dp.get();
      if (d->resolved || d->outstanding != 0) continue;
      if (d->group.complete()) {
        d->resolved = true;
        --in_flight;
        d->group.state = GroupState::COMPLETE;
        if (is_informative(d->group) && informative_count < target) {
          ++informative_count;
          stats.informative.push_back(d->group);
        }
        idle_tick();
      } else if (stop_requested || !abort_code.empty()) {
        d->resolved = true;
        --in_flight;
        d->group.state = GroupState::CARRIED_OVER;
        stats.carried_over.push_back(d->group);
        idle_tick();
      } else {
        issue_group(d);  // cancelled out from under us without a stop: retry
      }
    }

    if (abort_code.empty() && !stop_requested) {
      if (async) {
        while (in_flight < cap && informative_count < target && !exhausted) {
          auto got = take_groups(w, plan, 1);
          if (got.empty()) {
            exhausted = true;
            break;
          }
          admit(std::move(got.front()));
          idle_tick();
        }
        if (informative_count >= target) {
          stop_requested = true;
          idle_tick();
          // Stale-job cleanup; with cancel_stale off (wait-for-all ablation
          // arm) admission still stops but in-flight groups run to the end.
          if (plan.cancel_stale) {
            std::vector<std::pair<std::string, std::string>> to_cancel;
            for (auto& dp : active) {
              Dispatch* d = dp.get();
              if (d->resolved || d->outstanding == 0) continue;
              d->cancel_requested = true;
              for (const auto& jid : d->live_job_ids) {
                if (!jid.empty()) to_cancel.emplace_back(servers_[d->server_idx], jid);
              }
            }
            stats.cancels_issued += static_cast<int>(to_cancel.size());
            lk.unlock();
            for (const auto& [server, jid] : to_cancel) {
              try {
                RolloutClient(server).cancel(jid);
              } catch (const std::exception&) {
                // best effort; the job either finishes or times out on its own
              }
            }
            lk.lock();
          }
          continue;
        }
        if (exhausted && in_flight == 0 && total_outstanding == 0) {
          abort_code = "workload_exhausted";
          abort_message = "workload exhausted with " +
                          std::to_string(informative_count) + "/" +
                          std::to_string(target) + " informative groups";
        }
      } else {
        // Batch baseline: waves fully drain before the filter step runs.
        if (wave_pending.empty() && in_flight == 0 && total_outstanding == 0) {
          if (informative_count >= target) {
            stop_requested = true;
            idle_tick();
          } else if (stats.waves >= opts_.max_waves) {
            abort_code = "max_waves_exceeded";
            abort_message = "still " + std::to_string(target - informative_count) +
                            " informative groups short after " +
                            std::to_string(stats.waves) + " waves";
          } else {
            auto got = take_groups(w, plan, target);
            if (got.empty()) {
              abort_code = "workload_exhausted";
              abort_message = "workload exhausted with " +
                              std::to_string(informative_count) + "/" +
                              std::to_string(target) + " informative groups";
            } else {
              ++stats.waves;
              for (auto& g : got) wave_pending.push_back(std::move(g));
            }
          }
        }
        while (in_flight < cap && !wave_pending.empty()) {
          admit(std::move(wave_pending.front()));
          wave_pending.pop_front();
          idle_tick();
        }
      }
    }

    if (!abort_code.empty() && total_outstanding == 0) break;
    if (stop_requested && total_outstanding == 0) break;
    cv.wait(lk);
  }

  idle_tick();
  stats.wall_seconds = seconds_since(start);
  stats.idle_fraction =
      stats.wall_seconds > 0 ? idle_accum / stats.wall_seconds : 0.0;
  lk.unlock();

  for (auto& t : threads) t.join();

  if (!abort_code.empty()) throw Error{abort_code, abort_message};
  return stats;
}

SwapReport TrainerHarness::checkpoint_swap(
    const std::vector<std::string>& new_backends, double hold_ms) {
  SwapReport report;
  for (const auto& server : servers_) {
    RolloutClient client(server);
    auto status = client.status();
    report.backends_cleared +=
        static_cast<int>(status.value("backends", nlohmann::json::array()).size());
    client.clear_llm_server();
  }
  auto empty_from = std::chrono::steady_clock::now();

  if (hold_ms > 0) {
    std::this_thread::sleep_for(
        std::chrono::duration<double, std::milli>(hold_ms));
  }
  auto table = hierarchical_assign(servers_, new_backends);
  report.window_seconds = seconds_since(empty_from);

  for (const auto& [server, backends] : table.by_server) {
    if (backends.empty()) continue;
    RolloutClient client(server);
    for (const auto& b : backends) {
      client.add_llm_server(b);
      ++report.backends_added;
    }
  }
  return report;
}

}  // namespace rollout::train

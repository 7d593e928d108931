#pragma once

#include <array>
#include <memory>
#include <mutex>
#include <optional>

#include "rollout/clock.hpp"
#include "rollout/errors.hpp"
#include "rollout/types.hpp"

namespace rollout {

// Accumulates elapsed time only while a pipeline stage is active; time spent
// waiting in inter-stage queues never counts. Internally synchronized: the
// owning worker mutates it while other threads (response serialization,
// cancellation) read totals.
class PausableTimer {
 public:
  explicit PausableTimer(std::shared_ptr<Clock> clock)
      : clock_(std::move(clock)) {}

  void enter_phase(Stage stage) {
    std::lock_guard lock(mu_);
    if (active_) throw PhaseAlreadyActive();
    active_ = stage;
    phase_start_ = clock_->now();
  }

  void exit_phase() {
    std::lock_guard lock(mu_);
    if (!active_) throw NoActivePhase();
    accumulated_[static_cast<int>(*active_)] += clock_->now() - phase_start_;
    active_.reset();
  }

  // Sum of completed phase time, plus the live phase if one is running.
  Duration total_elapsed() const {
    std::lock_guard lock(mu_);
    Duration total{0};
    for (auto d : accumulated_) total += d;
    if (active_) total += clock_->now() - phase_start_;
    return total;
  }

  Duration elapsed(Stage stage) const {
    std::lock_guard lock(mu_);
    Duration d = accumulated_[static_cast<int>(stage)];
    if (active_ && *active_ == stage) d += clock_->now() - phase_start_;
    return d;
  }

  // Strictly greater: elapsed == budget has not expired.
  bool expired(Duration budget) const { return total_elapsed() > budget; }

  std::optional<Stage> active_stage() const {
    std::lock_guard lock(mu_);
    return active_;
  }

 private:
  std::shared_ptr<Clock> clock_;
  mutable std::mutex mu_;
  std::array<Duration, kStageCount> accumulated_{Duration{0}, Duration{0},
                                                 Duration{0}};
  std::optional<Stage> active_;
  Duration phase_start_{0};
};

// RAII phase guard used by stage workers.
class PhaseScope {
 public:
  PhaseScope(PausableTimer& timer, Stage stage) : timer_(timer) {
    timer_.enter_phase(stage);
  }
  ~PhaseScope() {
    try {
      timer_.exit_phase();
    } catch (...) {
    }
  }
  PhaseScope(const PhaseScope&) = delete;
  PhaseScope& operator=(const PhaseScope&) = delete;

 private:
  PausableTimer& timer_;
};

}  // namespace rollout

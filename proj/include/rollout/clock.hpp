#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>

namespace rollout {

using Duration = std::chrono::nanoseconds;
// Instant on a Clock's timeline, expressed as time since that clock's epoch.
using TimePoint = Duration;

// Injected time source. All timer arithmetic goes through this so tests can
// drive time deterministically.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Duration now() const = 0;
};

class SteadyClock final : public Clock {
 public:
  Duration now() const override {
    return std::chrono::steady_clock::now().time_since_epoch();
  }
};

// Test clock: time moves only when advance()/set() is called.
class ManualClock final : public Clock {
 public:
  Duration now() const override { return Duration(ns_.load()); }
  void advance(Duration d) { ns_.fetch_add(d.count()); }
  void set(Duration d) { ns_.store(d.count()); }

 private:
  std::atomic<std::int64_t> ns_{0};
};

inline std::shared_ptr<Clock> steady_clock_source() {
  static auto instance = std::make_shared<SteadyClock>();
  return instance;
}

inline double to_seconds(Duration d) {
  return std::chrono::duration<double>(d).count();
}

inline Duration from_seconds(double s) {
  return std::chrono::duration_cast<Duration>(std::chrono::duration<double>(s));
}

}  // namespace rollout

#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <unordered_set>
#include <vector>

#include "rollout/errors.hpp"

namespace rollout::sandbox {

// Hands out unique 127.x.y.z addresses. 127.0.0.1 is deliberately not in the
// pool so simulated runtimes can never collide with host-local services.
class LoopbackAllocator {
 public:
  explicit LoopbackAllocator(std::uint32_t capacity = 4096)
      : capacity_(capacity) {
    if (capacity_ == 0 || capacity_ > kHostSpace - 2)
      throw MalformedAddress{"loopback capacity out of range"};
  }

  std::string allocate() {
    std::lock_guard lk{mu_};
    std::string addr;
    if (!free_.empty()) {
      addr = free_.back();
      free_.pop_back();
    } else if (next_ < capacity_) {
      addr = format(next_++);
    } else {
      throw PoolExhausted{"loopback pool exhausted (capacity " +
                          std::to_string(capacity_) + ")"};
    }
    allocated_.insert(addr);
    return addr;
  }

  void release(const std::string& addr) {
    std::lock_guard lk{mu_};
    if (allocated_.erase(addr) == 0)
      throw MalformedAddress{"release of unallocated address " + addr};
    free_.push_back(addr);
  }

  std::size_t in_use() const {
    std::lock_guard lk{mu_};
    return allocated_.size();
  }

  std::uint32_t capacity() const { return capacity_; }

 private:
  static constexpr std::uint32_t kHostSpace = 1u << 24;

  // Offset 0 maps to 127.0.0.2; .0.0.0 and .0.0.1 are skipped.
  static std::string format(std::uint32_t offset) {
    std::uint32_t host = offset + 2;
    return "127." + std::to_string((host >> 16) & 0xFF) + "." +
           std::to_string((host >> 8) & 0xFF) + "." +
           std::to_string(host & 0xFF);
  }

  const std::uint32_t capacity_;
  mutable std::mutex mu_;
  std::uint32_t next_ = 0;
  std::vector<std::string> free_;
  std::unordered_set<std::string> allocated_;
};

}  // namespace rollout::sandbox

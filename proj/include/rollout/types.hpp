#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rollout/errors.hpp"

namespace rollout {

using TokenId = std::int64_t;
using TokenIds = std::vector<TokenId>;

// The three pipeline stages, in fixed order. EVAL has no successor.
enum class Stage { INIT = 0, RUN = 1, EVAL = 2 };

inline constexpr int kStageCount = 3;

inline std::optional<Stage> next_stage(Stage s) {
  switch (s) {
    case Stage::INIT: return Stage::RUN;
    case Stage::RUN: return Stage::EVAL;
    case Stage::EVAL: return std::nullopt;
  }
  return std::nullopt;
}

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::INIT: return "INIT";
    case Stage::RUN: return "RUN";
    case Stage::EVAL: return "EVAL";
  }
  return "?";
}

enum class JobStatus { PENDING, INIT, RUN, EVAL, DONE, FAILED, CANCELLED };

inline bool is_terminal(JobStatus s) {
  return s == JobStatus::DONE || s == JobStatus::FAILED ||
         s == JobStatus::CANCELLED;
}

inline const char* status_name(JobStatus s) {
  switch (s) {
    case JobStatus::PENDING: return "PENDING";
    case JobStatus::INIT: return "INIT";
    case JobStatus::RUN: return "RUN";
    case JobStatus::EVAL: return "EVAL";
    case JobStatus::DONE: return "DONE";
    case JobStatus::FAILED: return "FAILED";
    case JobStatus::CANCELLED: return "CANCELLED";
  }
  return "?";
}

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 64;
  TokenIds stop_token_ids;

  void validate() const {
    if (temperature < 0.0)
      throw MalformedRequest("temperature must be nonnegative");
    if (!(top_p > 0.0 && top_p <= 1.0))
      throw MalformedRequest("top_p must be in (0,1]");
    if (max_tokens < 1) throw MalformedRequest("max_tokens must be >= 1");
  }
};

}  // namespace rollout

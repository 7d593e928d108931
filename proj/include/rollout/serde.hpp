#pragma once

#include <json.hpp>

#include "rollout/types.hpp"

namespace rollout {

// Wire shape of sampling parameters, shared by the rollout server, the
// backend pool client, and the mock backend.
inline void to_json(nlohmann::json& j, const SamplingParams& p) {
  j = {{"temperature", p.temperature},
       {"top_p", p.top_p},
       {"max_tokens", p.max_tokens},
       {"stop_token_ids", p.stop_token_ids}};
}

inline void from_json(const nlohmann::json& j, SamplingParams& p) {
  p.temperature = j.value("temperature", 1.0);
  p.top_p = j.value("top_p", 1.0);
  p.max_tokens = j.value("max_tokens", 64);
  p.stop_token_ids = j.value("stop_token_ids", TokenIds{});
}

}  // namespace rollout

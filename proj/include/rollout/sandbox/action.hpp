#pragma once

#include <string>

#include <json.hpp>

#include "rollout/clock.hpp"
#include "rollout/errors.hpp"

namespace rollout::sandbox {

enum class ActionKind { BASH, PING, FINISH };

inline const char* action_kind_name(ActionKind k) {
  switch (k) {
    case ActionKind::BASH: return "bash";
    case ActionKind::PING: return "ping";
    case ActionKind::FINISH: return "finish";
  }
  return "?";
}

inline ActionKind parse_action_kind(const std::string& s) {
  if (s == "bash") return ActionKind::BASH;
  if (s == "ping") return ActionKind::PING;
  if (s == "finish") return ActionKind::FINISH;
  throw MalformedRequest{"unknown action kind: " + s};
}

struct ActionRequest {
  std::string action_id;
  ActionKind kind = ActionKind::PING;
  std::string payload;
  Duration timeout = std::chrono::seconds{30};
  // Marks an action that would need outbound network; rejected by runtimes
  // started with network_disabled.
  bool needs_network = false;
};

struct ActionResult {
  std::string action_id;
  int exit_code = 0;
  std::string output;
  Duration elapsed{0};
  // Set by the executor when the per-request timeout fired and the
  // subprocess was killed; the client maps this to ActionTimeout.
  bool timed_out = false;
};

inline void to_json(nlohmann::json& j, const ActionRequest& r) {
  j = {{"action_id", r.action_id},
       {"kind", action_kind_name(r.kind)},
       {"payload", r.payload},
       {"timeout_ms", std::chrono::duration_cast<std::chrono::milliseconds>(r.timeout).count()},
       {"needs_network", r.needs_network}};
}

inline void from_json(const nlohmann::json& j, ActionRequest& r) {
  r.action_id = j.at("action_id").get<std::string>();
  r.kind = parse_action_kind(j.at("kind").get<std::string>());
  r.payload = j.at("payload").get<std::string>();
  r.timeout = std::chrono::milliseconds{j.at("timeout_ms").get<std::int64_t>()};
  r.needs_network = j.value("needs_network", false);
}

inline void to_json(nlohmann::json& j, const ActionResult& r) {
  j = {{"action_id", r.action_id},
       {"exit_code", r.exit_code},
       {"output", r.output},
       {"elapsed_ms", std::chrono::duration_cast<std::chrono::milliseconds>(r.elapsed).count()},
       {"timed_out", r.timed_out}};
}

inline void from_json(const nlohmann::json& j, ActionResult& r) {
  r.action_id = j.at("action_id").get<std::string>();
  r.exit_code = j.at("exit_code").get<int>();
  r.output = j.at("output").get<std::string>();
  r.elapsed = std::chrono::milliseconds{j.at("elapsed_ms").get<std::int64_t>()};
  r.timed_out = j.value("timed_out", false);
}

}  // namespace rollout::sandbox

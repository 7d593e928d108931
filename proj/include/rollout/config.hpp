#pragma once

#include <array>
#include <istream>
#include <optional>
#include <string>

#include "rollout/types.hpp"

namespace rollout {

struct ServiceConfig {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 = pick a free port
  int workers_init = 8;
  int workers_run = 16;
  int workers_eval = 8;
  double default_timeout_seconds = 600;
  double retry_budget_seconds = 30;
  double grace_seconds = 2;
  std::string runtime_dir;  // empty = fresh directory under the system tmpdir
  std::string cache_root;   // empty = <runtime_dir>/cache
  int http_threads = 96;    // long-poll requests each occupy one
  int address_capacity = 4096;
  bool release_runtime_after_run = true;  // off only for ablation benches
};

// key=value lines; '#' starts a comment; unknown keys are an error so typos
// don't silently fall back to defaults.
ServiceConfig parse_config(std::istream& in);
ServiceConfig load_config_file(const std::string& path);

// Layering: defaults ← ROLLOUT_CONFIG file (or explicit path) ← ROLLOUT_BIND
// ("host:port") override.
ServiceConfig resolve_config(const std::optional<std::string>& config_path);

}  // namespace rollout

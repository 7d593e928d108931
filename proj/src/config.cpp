#include "rollout/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rollout/errors.hpp"

namespace rollout {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void apply(ServiceConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&] {
    try {
      return std::stoi(value);
    } catch (...) {
      throw MalformedRequest{"config key " + key + ": not an integer: " + value};
    }
  };
  auto as_double = [&] {
    try {
      return std::stod(value);
    } catch (...) {
      throw MalformedRequest{"config key " + key + ": not a number: " + value};
    }
  };

  if (key == "bind") cfg.bind = value;
  else if (key == "port") cfg.port = as_int();
  else if (key == "workers_init") cfg.workers_init = as_int();
  else if (key == "workers_run") cfg.workers_run = as_int();
  else if (key == "workers_eval") cfg.workers_eval = as_int();
  else if (key == "default_timeout_seconds") cfg.default_timeout_seconds = as_double();
  else if (key == "retry_budget_seconds") cfg.retry_budget_seconds = as_double();
  else if (key == "grace_seconds") cfg.grace_seconds = as_double();
  else if (key == "runtime_dir") cfg.runtime_dir = value;
  else if (key == "cache_root") cfg.cache_root = value;
  else if (key == "http_threads") cfg.http_threads = as_int();
  else if (key == "address_capacity") cfg.address_capacity = as_int();
  else if (key == "release_runtime_after_run") {
    if (value == "true" || value == "1") cfg.release_runtime_after_run = true;
    else if (value == "false" || value == "0") cfg.release_runtime_after_run = false;
    else throw MalformedRequest{"release_runtime_after_run must be true or false"};
  }
  else throw MalformedRequest{"unknown config key: " + key};
}

}  // namespace

ServiceConfig parse_config(std::istream& in) {
  ServiceConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw MalformedRequest{"config line " + std::to_string(lineno) +
                             ": expected key=value"};
    apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ServiceConfig load_config_file(const std::string& path) {
  std::ifstream in{path};
  if (!in) throw MalformedRequest{"cannot open config file: " + path};
  return parse_config(in);
}

ServiceConfig resolve_config(const std::optional<std::string>& config_path) {
  ServiceConfig cfg;
  std::string path;
  if (config_path) {
    path = *config_path;
  } else if (const char* env = std::getenv("ROLLOUT_CONFIG"); env && *env) {
    path = env;
  }
  if (!path.empty()) cfg = load_config_file(path);

  if (const char* bind = std::getenv("ROLLOUT_BIND"); bind && *bind) {
    std::string v{bind};
    auto colon = v.rfind(':');
    if (colon == std::string::npos)
      throw MalformedRequest{"ROLLOUT_BIND must be host:port"};
    cfg.bind = v.substr(0, colon);
    try {
      cfg.port = std::stoi(v.substr(colon + 1));
    } catch (...) {
      throw MalformedRequest{"ROLLOUT_BIND port is not a number"};
    }
  }
  return cfg;
}

}  // namespace rollout

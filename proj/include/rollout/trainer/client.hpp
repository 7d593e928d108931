#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "rollout/clock.hpp"

namespace rollout::train {

// HTTP client for one rollout server. process() is a long poll: the read
// timeout must comfortably exceed job budgets, so it defaults high.
class RolloutClient {
 public:
  explicit RolloutClient(std::string address,
                         Duration read_timeout = std::chrono::minutes{20});
  ~RolloutClient();

  RolloutClient(RolloutClient&&) noexcept;
  RolloutClient& operator=(RolloutClient&&) noexcept;

  const std::string& address() const { return address_; }

  nlohmann::json process(const nlohmann::json& body);
  nlohmann::json cancel(const std::string& job_id);
  nlohmann::json add_llm_server(const std::string& backend_address);
  nlohmann::json clear_llm_server();
  nlohmann::json start();
  nlohmann::json stop();
  nlohmann::json status();

  // Polls /status until the server answers. False on deadline.
  bool wait_ready(Duration timeout);

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  std::string address_;
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// True once a TCP connect to host:port succeeds (used for backends that
// expose no status endpoint worth parsing).
bool wait_port_open(const std::string& host, int port, Duration timeout);

}  // namespace rollout::train

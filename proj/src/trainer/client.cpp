#include "rollout/trainer/client.hpp"

#include <httplib.h>

#include <chrono>
#include <thread>

#include "rollout/backend_pool.hpp"
#include "rollout/errors.hpp"

namespace rollout::train {

struct RolloutClient::Impl {
  httplib::Client http;

  Impl(const std::pair<std::string, int>& hp, Duration read_timeout)
      : http(hp.first, hp.second) {
    http.set_connection_timeout(std::chrono::seconds{5});
    http.set_read_timeout(
        std::chrono::duration_cast<std::chrono::milliseconds>(read_timeout));
    http.set_write_timeout(std::chrono::seconds{30});
    http.set_keep_alive(false);  // long polls hold sockets; reconnect per call
  }
};

RolloutClient::RolloutClient(std::string address, Duration read_timeout)
    : address_(std::move(address)) {
  auto hp = backend::parse_http_address(address_);
  impl_ = std::make_unique<Impl>(hp, read_timeout);
}

RolloutClient::~RolloutClient() = default;
RolloutClient::RolloutClient(RolloutClient&&) noexcept = default;
RolloutClient& RolloutClient::operator=(RolloutClient&&) noexcept = default;

nlohmann::json RolloutClient::post(const std::string& path,
                                   const nlohmann::json& body) {
  auto res = impl_->http.Post(path, body.dump(), "application/json");
  if (!res) {
    throw BackendUnreachable{"POST " + address_ + path + " failed: " +
                             httplib::to_string(res.error())};
  }
  nlohmann::json parsed =
      nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (res->status != 200) {
    std::string code = "http_" + std::to_string(res->status);
    std::string message = res->body;
    if (parsed.is_object()) {
      code = parsed.value("error", code);
      message = parsed.value("message", message);
    }
    throw Error{code, message};
  }
  if (parsed.is_discarded()) {
    throw BackendUnreachable{"POST " + address_ + path +
                             " returned unparseable body"};
  }
  return parsed;
}

nlohmann::json RolloutClient::process(const nlohmann::json& body) {
  return post("/process", body);
}

nlohmann::json RolloutClient::cancel(const std::string& job_id) {
  return post("/cancel", {{"job_id", job_id}});
}

nlohmann::json RolloutClient::add_llm_server(const std::string& backend_address) {
  return post("/add_llm_server", {{"address", backend_address}});
}

nlohmann::json RolloutClient::clear_llm_server() {
  return post("/clear_llm_server", nlohmann::json::object());
}

nlohmann::json RolloutClient::start() {
  return post("/start", nlohmann::json::object());
}

nlohmann::json RolloutClient::stop() {
  return post("/stop", nlohmann::json::object());
}

nlohmann::json RolloutClient::status() {
  auto res = impl_->http.Get("/status");
  if (!res) {
    throw BackendUnreachable{"GET " + address_ + "/status failed: " +
                             httplib::to_string(res.error())};
  }
  if (res->status != 200) {
    throw Error{"http_" + std::to_string(res->status), res->body};
  }
  return nlohmann::json::parse(res->body);
}

bool RolloutClient::wait_ready(Duration timeout) {
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
  while (std::chrono::steady_clock::now() < deadline) {
    try {
      status();
      return true;
    } catch (const std::exception&) {
      std::this_thread::sleep_for(std::chrono::milliseconds{20});
    }
  }
  return false;
}

bool wait_port_open(const std::string& host, int port, Duration timeout) {
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(timeout);
  while (std::chrono::steady_clock::now() < deadline) {
    httplib::Client probe(host, port);
    probe.set_connection_timeout(std::chrono::milliseconds{200});
    probe.set_read_timeout(std::chrono::milliseconds{500});
    if (auto res = probe.Get("/status"); res || res.error() != httplib::Error::Connection) {
      return true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds{20});
  }
  return false;
}

}  // namespace rollout::train

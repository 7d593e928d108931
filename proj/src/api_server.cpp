#include "rollout/api_server.hpp"

#include <httplib.h>

#include <json.hpp>
#include <stdexcept>
#include <thread>

#include "rollout/errors.hpp"

namespace rollout {

namespace {

int status_for(const std::string& code) {
  if (code == "malformed_request" || code == "malformed_address" ||
      code == "malformed_turn") {
    return 400;
  }
  if (code == "unknown_task" || code == "unknown_job") return 404;
  if (code == "duplicate_job_id" || code == "duplicate_address" ||
      code == "duplicate_name" || code == "already_started" ||
      code == "not_started") {
    return 409;
  }
  if (code == "server_stopped") return 503;
  return 500;
}

void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Runs `fn(parsed body)` and maps exceptions onto HTTP statuses. GET-style
// endpoints pass an ignored empty body.
template <typename Fn>
void handle(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
  nlohmann::json body = nlohmann::json::object();
  if (!req.body.empty()) {
    body = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded()) {
      reply_json(res, 400,
                 {{"error", "malformed_request"},
                  {"message", "request body is not valid JSON"}});
      return;
    }
  }
  try {
    reply_json(res, 200, fn(body));
  } catch (const Error& e) {
    reply_json(res, status_for(e.code()),
               {{"error", e.code()}, {"message", e.what()}});
  } catch (const std::exception& e) {
    reply_json(res, 500, {{"error", "internal"}, {"message", e.what()}});
  }
}

}  // namespace

struct ApiServer::Impl {
  httplib::Server server;
  std::thread thread;
};

ApiServer::ApiServer(RolloutService& service, std::string bind, int port,
                     int http_threads)
    : service_(service),
      bind_(std::move(bind)),
      port_(port),
      http_threads_(http_threads),
      impl_(std::make_unique<Impl>()) {
  if (http_threads_ < 1) throw MalformedRequest{"http_threads must be >= 1"};
}

ApiServer::~ApiServer() {
  try {
    stop();
  } catch (...) {
  }
}

void ApiServer::start() {
  if (impl_->thread.joinable()) throw AlreadyStarted{"api server already running"};

  auto& s = impl_->server;
  s.new_task_queue = [n = http_threads_] { return new httplib::ThreadPool(n); };
  // The read timeout only bounds request parsing; it must stay short or a
  // POST without Content-Length pins a worker until it fires. /process
  // long-polling lives in handler latency, which no server timeout touches.
  s.set_read_timeout(std::chrono::seconds(5));
  s.set_write_timeout(std::chrono::minutes(5));

  s.Post("/process", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json& b) { return service_.process(b); });
  });
  s.Post("/cancel", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json& b) { return service_.cancel_job(b); });
  });
  s.Post("/add_llm_server", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json& b) { return service_.add_llm_server(b); });
  });
  s.Post("/clear_llm_server", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json&) { return service_.clear_llm_server(); });
  });
  s.Post("/start", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json&) {
      service_.start();
      return nlohmann::json{{"running", true}};
    });
  });
  s.Post("/stop", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json&) {
      service_.stop();
      return nlohmann::json{{"running", false}};
    });
  });
  s.Get("/status", [this](const httplib::Request& req, httplib::Response& res) {
    handle(req, res, [this](const nlohmann::json&) { return service_.status(); });
  });

  if (port_ == 0) {
    int picked = s.bind_to_any_port(bind_);
    if (picked <= 0) throw Error{"bind_failed", "could not bind " + bind_};
    port_ = picked;
  } else {
    if (!s.bind_to_port(bind_, port_)) {
      throw Error{"bind_failed",
                  "could not bind " + bind_ + ":" + std::to_string(port_)};
    }
  }

  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  while (!impl_->server.is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

void ApiServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

}  // namespace rollout

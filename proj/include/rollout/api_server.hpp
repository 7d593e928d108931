#pragma once

#include <memory>
#include <string>

#include "rollout/service.hpp"

namespace rollout {

// HTTP/1.1 front end: /process, /cancel, /add_llm_server, /clear_llm_server,
// /start, /stop, /status. Long-poll /process calls each hold a server
// thread, so the listener pool is sized well above expected concurrency.
class ApiServer {
 public:
  ApiServer(RolloutService& service, std::string bind, int port,
            int http_threads = 96);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds and starts serving on a background thread; returns once the
  // socket is accepting. Port 0 picks a free port (see port()).
  void start();
  void stop();

  int port() const { return port_; }
  const std::string& bind_address() const { return bind_; }

 private:
  struct Impl;  // hides httplib from this header
  RolloutService& service_;
  std::string bind_;
  int port_;
  int http_threads_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rollout

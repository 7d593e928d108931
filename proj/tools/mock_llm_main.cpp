// Deterministic stand-in for an LLM inference server: same /v1/generate
// wire shape, reproducible token streams, tunable latency — so every
// scheduling and fidelity property can be checked without a GPU.

#include <httplib.h>
#include <signal.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <semaphore>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "rollout/errors.hpp"
#include "rollout/mock/policy.hpp"
#include "rollout/serde.hpp"

namespace {

struct Stats {
  std::atomic<std::int64_t> requests_total{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> max_in_flight{0};

  void enter() {
    int now = ++in_flight;
    int seen = max_in_flight.load();
    while (now > seen && !max_in_flight.compare_exchange_weak(seen, now)) {
    }
  }
  void leave() { --in_flight; }
};

double draw_latency_ms(double mean, double jitter) {
  if (mean <= 0 && jitter <= 0) return 0;
  thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> d(mean - jitter, mean + jitter);
  return std::max(0.0, d(rng));
}

void load_script(const std::string& path, rollout::mock::PolicyConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw rollout::Error{"script_io", "cannot open " + path};
  nlohmann::json j;
  in >> j;
  if (!j.is_object()) {
    throw rollout::MalformedRequest{"script file must map digest hex to id arrays"};
  }
  for (const auto& [digest, ids] : j.items()) {
    cfg.script[digest] = ids.get<rollout::TokenIds>();
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic mock LLM server"};
  std::string bind = "127.0.0.1";
  int port = 0;
  int http_threads = 64;
  std::string mode = "hash";
  std::string script_file;
  std::uint64_t seed = 0;
  std::int64_t vocab_size = 50000;
  int response_len = 8;
  double latency_mean_ms = 0, latency_jitter_ms = 0;
  int max_concurrency = 0;

  app.add_option("--bind", bind);
  app.add_option("--port", port, "0 picks a free port");
  app.add_option("--http-threads", http_threads);
  app.add_option("--mode", mode)->check(CLI::IsMember({"hash", "script"}));
  app.add_option("--script-file", script_file,
                 "JSON: prompt digest hex -> token ids (-1 = stop)");
  app.add_option("--seed", seed);
  app.add_option("--vocab-size", vocab_size);
  app.add_option("--response-len", response_len);
  app.add_option("--latency-mean-ms", latency_mean_ms);
  app.add_option("--latency-jitter-ms", latency_jitter_ms);
  app.add_option("--max-concurrency", max_concurrency,
                 "block requests beyond this many in flight (0 = unlimited)");
  CLI11_PARSE(app, argc, argv);

  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
  ::signal(SIGPIPE, SIG_IGN);

  rollout::mock::PolicyConfig policy;
  policy.mode = mode == "script" ? rollout::mock::PolicyConfig::Mode::SCRIPT
                                 : rollout::mock::PolicyConfig::Mode::HASH;
  policy.seed = seed;
  policy.vocab_size = vocab_size;
  policy.response_len = response_len;
  try {
    if (!script_file.empty()) load_script(script_file, policy);
    if (policy.mode == rollout::mock::PolicyConfig::Mode::SCRIPT &&
        policy.script.empty()) {
      std::fprintf(stderr, "mock-llm: script mode needs --script-file\n");
      return 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mock-llm: %s\n", e.what());
    return 1;
  }

  Stats stats;
  std::unique_ptr<std::counting_semaphore<>> gate;
  if (max_concurrency > 0) {
    gate = std::make_unique<std::counting_semaphore<>>(max_concurrency);
  }

  httplib::Server server;
  server.new_task_queue = [http_threads] {
    return new httplib::ThreadPool(http_threads);
  };

  server.Post("/v1/generate", [&](const httplib::Request& req,
                                  httplib::Response& res) {
    stats.requests_total++;
    auto fail = [&](int status, const std::string& code, const std::string& msg) {
      res.status = status;
      res.set_content(
          nlohmann::json{{"error", code}, {"message", msg}}.dump(),
          "application/json");
    };
    nlohmann::json body =
        nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded() || !body.is_object()) {
      fail(400, "malformed_request", "body is not a JSON object");
      return;
    }
    rollout::TokenIds prompt_ids;
    rollout::SamplingParams params;
    try {
      prompt_ids = body.value("prompt_ids", rollout::TokenIds{});
      if (body.contains("sampling_params")) {
        params = body["sampling_params"].get<rollout::SamplingParams>();
      }
    } catch (const std::exception& e) {
      fail(400, "malformed_request", e.what());
      return;
    }

    if (gate) gate->acquire();
    stats.enter();
    try {
      double ms = draw_latency_ms(latency_mean_ms, latency_jitter_ms);
      if (ms > 0) {
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
      }
      auto gen = rollout::mock::generate_tokens(policy, prompt_ids, params);
      res.set_content(nlohmann::json{{"output_ids", gen.output_ids},
                                     {"logprobs", gen.logprobs},
                                     {"finish_reason", gen.finish_reason}}
                          .dump(),
                      "application/json");
    } catch (const rollout::Error& e) {
      fail(400, e.code(), e.what());
    } catch (const std::exception& e) {
      fail(500, "internal", e.what());
    }
    stats.leave();
    if (gate) gate->release();
  });

  server.Get("/v1/stats", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(
        nlohmann::json{{"requests_total", stats.requests_total.load()},
                       {"in_flight_now", stats.in_flight.load()},
                       {"max_in_flight", stats.max_in_flight.load()}}
            .dump(),
        "application/json");
  });

  if (port == 0) {
    port = server.bind_to_any_port(bind);
    if (port <= 0) {
      std::fprintf(stderr, "mock-llm: cannot bind %s\n", bind.c_str());
      return 1;
    }
  } else if (!server.bind_to_port(bind, port)) {
    std::fprintf(stderr, "mock-llm: cannot bind %s:%d\n", bind.c_str(), port);
    return 1;
  }

  std::thread serving([&] { server.listen_after_bind(); });
  while (!server.is_running()) {
    std::this_thread::sleep_for(std::chrono::milliseconds{1});
  }
  std::printf("listening on http://%s:%d\n", bind.c_str(), port);
  std::fflush(stdout);

  int sig = 0;
  sigwait(&sigs, &sig);
  server.stop();
  serving.join();
  return 0;
}

// Rollout service entry point: HTTP front end over the three-stage pipeline.

#include <signal.h>

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rollout/api_server.hpp"
#include "rollout/config.hpp"
#include "rollout/service.hpp"

int main(int argc, char** argv) {
  CLI::App app{"rollout service"};
  std::string config_path;
  std::string bind;
  int port = -1;
  bool autostart = true;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--bind", bind, "bind address (overrides config)");
  app.add_option("--port", port, "port, 0 picks a free one (overrides config)");
  app.add_flag("--autostart,!--no-autostart", autostart,
               "start the pipeline immediately (default on)");
  CLI11_PARSE(app, argc, argv);

  // Route SIGINT/SIGTERM to the sigwait below, in every thread we spawn.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
  ::signal(SIGPIPE, SIG_IGN);

  try {
    auto cfg = rollout::resolve_config(
        config_path.empty() ? std::nullopt
                            : std::optional<std::string>{config_path});
    if (!bind.empty()) cfg.bind = bind;
    if (port >= 0) cfg.port = port;

    rollout::RolloutService service(cfg);
    if (autostart) service.start();

    rollout::ApiServer api(service, cfg.bind, cfg.port, cfg.http_threads);
    api.start();
    std::printf("listening on http://%s:%d\n", api.bind_address().c_str(),
                api.port());
    std::fflush(stdout);

    int sig = 0;
    sigwait(&sigs, &sig);

    api.stop();
    if (service.running()) service.stop();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rollout-server: %s\n", e.what());
    return 1;
  }
  return 0;
}

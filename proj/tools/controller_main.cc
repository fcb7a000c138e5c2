// Federation controller process. Prints "READY <endpoint>" once listening,
// then serves until a ShutDown message arrives.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "fedlite/controller.h"
#include "fedlite/errors.h"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Federation controller"};
  fedlite::ControllerOptions options;
  auto& config = options.config;
  std::string mode = "sync", cert, key;
  uint64_t rounds = 0;
  double wall_clock = -1;
  app.add_option("--listen", options.listen, "host:port to listen on (port 0 picks one)");
  app.add_option("--cert", cert, "TLS certificate (PEM)");
  app.add_option("--key", key, "TLS private key (PEM)");
  app.add_option("--mode", mode, "sync or async")->check(CLI::IsMember({"sync", "async"}));
  app.add_option("--rounds", rounds, "round limit (async: community updates)");
  app.add_option("--wall-clock", wall_clock, "wall-clock limit in seconds");
  app.add_option("--participation", config.participation, "fraction of learners per round");
  app.add_option("--epochs", config.hyperparams.epochs);
  app.add_option("--batch-size", config.hyperparams.batch_size);
  app.add_option("--lr", config.hyperparams.learning_rate);
  app.add_option("--seed", config.seed, "participant sampling seed");
  app.add_option("--train-timeout", config.train_timeout_s, "seconds");
  app.add_option("--eval-timeout", config.eval_timeout_s, "seconds");
  app.add_option("--ack-timeout", config.ack_timeout_s, "seconds");
  app.add_option("--agg-workers", config.aggregation_workers, "aggregation threads");
  app.add_option("--expected-learners", config.expected_learners,
                 "learners to wait for before the first round");
  app.add_option("--event-log", options.event_log_path, "JSON-lines event log path");
  CLI11_PARSE(app, argc, argv);

  if (cert.empty() != key.empty()) {
    std::cerr << "controller: --cert and --key go together\n";
    return 1;
  }
  config.mode = mode == "async" ? fedlite::FederationMode::kAsynchronous
                                : fedlite::FederationMode::kSynchronous;
  if (rounds > 0) config.max_rounds = rounds;
  if (wall_clock >= 0) config.max_wall_clock_s = wall_clock;

  try {
    std::optional<fedlite::net::TlsConfig> tls;
    if (!cert.empty()) tls = fedlite::net::TlsConfig{cert, key, ""};
    auto network = fedlite::net::make_tcp_network(tls);
    fedlite::ControllerService service(*network, options);
    std::cout << "READY " << service.endpoint() << std::endl;
    service.wait_for_shutdown();
    service.stop();
  } catch (const std::exception& e) {
    std::cerr << "controller: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

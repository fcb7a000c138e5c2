// Learner process. Prints "READY <endpoint>" once listening, joins the
// controller (immediately, or after the driver ships the model with
// --await-model) and serves until ShutDown.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "fedlite/learner.h"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Federation learner"};
  fedlite::LearnerOptions options;
  std::string cert, key, ca;
  double delay_ms = 0;
  app.add_option("--controller", options.controller, "controller host:port")->required();
  app.add_option("--listen", options.listen, "host:port to listen on (port 0 picks one)");
  app.add_option("--index", options.index, "learner index (dataset seed)");
  app.add_option("--samples", options.samples, "training and test samples");
  app.add_option("--id", options.learner_id, "learner id (default learner-<index>)");
  app.add_option("--data-seed", options.function_seed, "seed of the shared target function");
  app.add_option("--cert", cert, "TLS certificate (PEM), also sent at join");
  app.add_option("--key", key, "TLS private key (PEM)");
  app.add_option("--ca", ca, "certificates trusted for the controller (PEM)");
  app.add_flag("--await-model", options.await_model, "join after the driver ships the model");
  app.add_option("--train-delay-ms", delay_ms, "extra delay before each training task");
  app.add_flag("--drain", options.drain_on_shutdown, "finish queued work on ShutDown");
  app.add_option("--event-log", options.event_log_path, "JSON-lines event log path");
  CLI11_PARSE(app, argc, argv);
  options.train_delay_s = delay_ms / 1000.0;

  if (cert.empty() != key.empty() || (!ca.empty() && cert.empty())) {
    std::cerr << "learner: TLS needs --cert and --key (and optionally --ca)\n";
    return 1;
  }
  try {
    std::optional<fedlite::net::TlsConfig> tls;
    if (!cert.empty()) {
      tls = fedlite::net::TlsConfig{cert, key, ca};
      options.cert_file = cert;
    }
    auto network = fedlite::net::make_tcp_network(tls);
    fedlite::LearnerService service(*network, options);
    std::cout << "READY " << service.endpoint() << std::endl;
    service.start();
    service.wait_for_shutdown();
    service.stop();
    return service.exit_code();
  } catch (const fedlite::JoinRejected& e) {
    std::cerr << "learner: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "learner: " << e.what() << "\n";
    return 1;
  }
}

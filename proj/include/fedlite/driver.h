#ifndef FEDLITE_DRIVER_H_
#define FEDLITE_DRIVER_H_

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlite/environment.h"
#include "fedlite/event_log.h"
#include "fedlite/metrics.h"
#include "fedlite/transport.h"
#include "fedlite/wire_protocol.h"

namespace fedlite {

struct TlsMaterial {
  KeyPair controller;
  std::vector<KeyPair> learners;  // by learner index
  bool enabled() const { return !controller.cert.empty(); }
};

// self_signed: one fresh key pair per component under `dir` (IoFailure when
// it cannot be written). provided_paths: checks the files exist
// (ConfigError). off: nothing.
TlsMaterial generate_tls_material(const FederationEnvironment& env, const std::string& dir);

struct HealthEvent {
  std::string component;
  bool healthy = true;
  double t = 0;                     // seconds since initialization began
  std::optional<double> latency_s;  // Ping round trip when a Pong came back
  uint32_t missed = 0;              // consecutive missed Pongs
};

struct ComponentExit {
  std::string component;
  std::optional<int> status;  // exit code, 128 + signal, or none if unknown
  double shutdown_sent = -1;
  double exited = -1;
  bool forced = false;  // ignored ShutDown past the grace period and was killed
};

struct ShutdownReport {
  std::vector<ComponentExit> learners;
  ComponentExit controller;
  std::vector<std::string> forced_kills;
};

// A running federation. initialize() brings it up in order (controller,
// initial model, learners, model shipment, registration) and starts the
// heartbeat monitor; shutdown() tears it down learners first.
class Federation {
 public:
  // Throws StartupFailure after tearing down whatever was already started.
  static std::unique_ptr<Federation> initialize(FederationEnvironment env);
  ~Federation();
  Federation(const Federation&) = delete;
  Federation& operator=(const Federation&) = delete;

  const FederationEnvironment& environment() const { return env_; }
  const std::string& run_dir() const { return env_.run_dir; }
  const std::string& controller_endpoint() const;
  std::vector<std::string> learner_endpoints() const;
  std::string controller_log_path() const;
  double now() const;

  // Throws TransportError when the controller does not answer.
  wire::StatusReply status();
  // Polls the controller until its phase is done.
  bool wait_for_completion(double timeout_s);

  std::vector<HealthEvent> health_events() const;
  // First event for `component` with the given health, waiting if needed.
  std::optional<HealthEvent> wait_for_health(const std::string& component, bool healthy,
                                             double timeout_s);

  // Crashes a learner without any shutdown message (fault injection).
  void kill_learner(size_t index);

  // Learners first, then the controller. Idempotent.
  const ShutdownReport& shutdown();

  // The controller's event log. Complete once shut down.
  std::vector<LogEvent> controller_events() const;
  nlohmann::json manifest() const;

 private:
  class Component;
  class ChildComponent;
  class LocalController;
  class LocalLearner;
  class AttachedComponent;

  explicit Federation(FederationEnvironment env);
  void start();
  void start_controller();
  void start_learners();
  void await_registration();
  void monitor_loop();
  void stop_monitor();
  void write_manifest() const;

  FederationEnvironment env_;
  EventLog clock_;
  TlsMaterial tls_;
  std::unique_ptr<net::InMemoryNetwork> memory_;  // in-process without TLS
  std::unique_ptr<net::Network> driver_network_;
  net::Network* network_ = nullptr;  // what the driver dials with
  ModelState initial_model_;
  std::unique_ptr<Component> controller_;
  std::vector<std::unique_ptr<Component>> learners_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<HealthEvent> health_;
  bool monitor_stopping_ = false;
  std::thread monitor_;

  std::mutex shutdown_mu_;
  std::optional<ShutdownReport> report_;
};

struct RunResult {
  bool completed = false;  // the controller reached its termination criterion
  wire::StatusReply status;
  std::vector<RoundMetrics> rounds;
  std::vector<LogEvent> events;
  std::vector<HealthEvent> health;
  ShutdownReport shutdown;
  std::vector<CsvRow> rows;
  nlohmann::json manifest;
};

// Initialize, wait for the termination criterion (at most `timeout_s`),
// shut down, compute per-round metrics, append them to metrics_out and
// write the final manifest.
RunResult run_federation(FederationEnvironment env, double timeout_s);

}  // namespace fedlite

#endif  // FEDLITE_DRIVER_H_

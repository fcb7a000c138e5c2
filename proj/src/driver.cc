#include "fedlite/driver.h"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>

#include "fedlite/controller.h"
#include "fedlite/learner.h"
#include "fedlite/process.h"
#include "fedlite/tls.h"

namespace fedlite {
namespace fs = std::filesystem;

namespace {

constexpr int kKilledStatus = 128 + 9;
constexpr double kMessageTimeoutS = 5;
constexpr double kModelTimeoutS = 120;

net::Clock::time_point time_after(double seconds) {
  return net::Clock::now() + std::chrono::duration_cast<net::Clock::duration>(
                                 std::chrono::duration<double>(seconds));
}

std::string learner_name(size_t i) { return "learner-" + std::to_string(i); }

void check_ack(const wire::Message& reply, const std::string& component,
               const std::string& what) {
  const auto* ack = std::get_if<wire::Ack>(&reply);
  if (ack == nullptr || !ack->status) {
    throw StartupFailure(component, what + " was not acknowledged");
  }
}

std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

std::string make_run_dir(const std::string& requested) {
  if (!requested.empty()) {
    std::error_code ec;
    fs::create_directories(requested, ec);
    if (ec) throw IoFailure("cannot create run directory " + requested + ": " + ec.message());
    return fs::absolute(requested).string();
  }
  std::string templ = (fs::temp_directory_path() / "fedlite-run-XXXXXX").string();
  if (::mkdtemp(templ.data()) == nullptr) {
    throw IoFailure("cannot create a temporary run directory");
  }
  return templ;
}

// Runs `body` (wait for ShutDown, then stop) on its own thread, standing in
// for a process main.
class LocalMain {
 public:
  ~LocalMain() { join(); }
  void start(std::function<int()> body) {
    thread_ = std::thread([this, body = std::move(body)] {
      const int status = body();
      std::lock_guard lock(mu_);
      status_ = status;
      cv_.notify_all();
    });
  }
  bool wait(double seconds) {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, std::chrono::duration<double>(seconds),
                        [&] { return status_.has_value(); });
  }
  std::optional<int> status() const {
    std::lock_guard lock(mu_);
    return status_;
  }
  void join() {
    if (thread_.joinable()) thread_.join();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<int> status_;
  std::thread thread_;
};

}  // namespace

TlsMaterial generate_tls_material(const FederationEnvironment& env, const std::string& dir) {
  TlsMaterial out;
  switch (env.tls.mode) {
    case TlsMode::kOff:
      return out;
    case TlsMode::kProvidedPaths: {
      auto check = [](const KeyPair& p, const std::string& who) {
        for (const auto& f : {p.cert, p.key}) {
          if (f.empty() || !fs::is_regular_file(f)) {
            throw ConfigError("TLS file for " + who + " not found: '" + f + "'");
          }
        }
      };
      check(env.tls.controller, "controller");
      for (size_t i = 0; i < env.tls.learners.size(); ++i) {
        check(env.tls.learners[i], learner_name(i));
      }
      out.controller = env.tls.controller;
      out.learners = env.tls.learners;
      return out;
    }
    case TlsMode::kSelfSigned: {
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoFailure("cannot create " + dir + ": " + ec.message());
      auto make = [&](const std::string& name) {
        KeyPair p{(fs::path(dir) / (name + ".pem")).string(),
                  (fs::path(dir) / (name + ".key")).string()};
        tls::generate_self_signed(name, p.key, p.cert);
        return p;
      };
      out.controller = make("controller");
      for (uint32_t i = 0; i < env.learners; ++i) out.learners.push_back(make(learner_name(i)));
      return out;
    }
  }
  return out;
}

class Federation::Component {
 public:
  explicit Component(std::string name) : name_(std::move(name)) {}
  virtual ~Component() = default;
  const std::string& name() const { return name_; }
  const std::string& endpoint() const { return endpoint_; }
  virtual std::optional<int> pid() const { return std::nullopt; }
  // True once the component is gone.
  virtual bool wait_exit(double seconds) = 0;
  virtual std::optional<int> exit_status() const = 0;
  // Abrupt termination. False when the driver cannot do that.
  virtual bool kill() = 0;

 protected:
  std::string name_;
  std::string endpoint_;
};

class Federation::ChildComponent : public Federation::Component {
 public:
  ChildComponent(const ProcessSpec& spec, double ready_timeout_s)
      : Component(spec.name), child_(ChildProcess::spawn(spec, ready_timeout_s)) {
    endpoint_ = child_->endpoint();
  }
  std::optional<int> pid() const override { return child_->pid(); }
  bool wait_exit(double seconds) override {
    status_ = child_->wait_for(seconds);
    return status_.has_value();
  }
  std::optional<int> exit_status() const override { return status_; }
  bool kill() override {
    child_->kill();
    status_ = child_->wait_for(5);
    return true;
  }

 private:
  std::unique_ptr<ChildProcess> child_;
  std::optional<int> status_;
};

class Federation::LocalController : public Federation::Component {
 public:
  LocalController(net::Network& shared, std::unique_ptr<net::Network> own,
                  ControllerOptions options)
      : Component("controller"), own_(std::move(own)) {
    service_ = std::make_unique<ControllerService>(own_ ? *own_ : shared, std::move(options));
    endpoint_ = service_->endpoint();
    main_.start([this] {
      service_->wait_for_shutdown();
      service_->stop();
      return 0;
    });
  }
  ~LocalController() override {
    service_->stop();
    main_.join();
  }
  bool wait_exit(double seconds) override { return main_.wait(seconds); }
  std::optional<int> exit_status() const override {
    return killed_ ? std::optional<int>(kKilledStatus) : main_.status();
  }
  bool kill() override {
    killed_ = true;
    service_->stop();
    main_.wait(30);
    return true;
  }

 private:
  std::unique_ptr<net::Network> own_;
  std::unique_ptr<ControllerService> service_;
  LocalMain main_;
  std::atomic<bool> killed_{false};
};

class Federation::LocalLearner : public Federation::Component {
 public:
  LocalLearner(net::Network& shared, std::unique_ptr<net::Network> own,
               net::InMemoryNetwork* memory, LearnerOptions options)
      : Component(learner_name(options.index)), own_(std::move(own)), memory_(memory) {
    service_ = std::make_unique<LearnerService>(own_ ? *own_ : shared, std::move(options));
    endpoint_ = service_->endpoint();
    service_->start();
    main_.start([this] {
      service_->wait_for_shutdown();
      service_->stop();
      return service_->exit_code();
    });
  }
  ~LocalLearner() override {
    service_->stop();
    main_.join();
  }
  bool wait_exit(double seconds) override { return main_.wait(seconds); }
  std::optional<int> exit_status() const override {
    return killed_ ? std::optional<int>(kKilledStatus) : main_.status();
  }
  bool kill() override {
    killed_ = true;
    // Refuse new connections right away, as a dead process would.
    if (memory_) memory_->set_unreachable(endpoint_, true);
    service_->stop();
    main_.wait(30);
    return true;
  }

 private:
  std::unique_ptr<net::Network> own_;
  net::InMemoryNetwork* memory_;
  std::unique_ptr<LearnerService> service_;
  LocalMain main_;
  std::atomic<bool> killed_{false};
};

// Started elsewhere; the driver only sees it through the network.
class Federation::AttachedComponent : public Federation::Component {
 public:
  AttachedComponent(std::string name, std::string endpoint, net::Network& network)
      : Component(std::move(name)), network_(network) {
    endpoint_ = std::move(endpoint);
  }
  bool wait_exit(double seconds) override {
    const auto deadline = time_after(seconds);
    while (true) {
      try {
        net::call(network_, endpoint_, wire::Ping{}, 1);
      } catch (const TimeoutError&) {
      } catch (const Error&) {
        gone_ = true;
        return true;
      }
      if (net::Clock::now() >= deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  std::optional<int> exit_status() const override { return std::nullopt; }
  bool kill() override { return false; }

 private:
  net::Network& network_;
  bool gone_ = false;
};

Federation::Federation(FederationEnvironment env) : env_(std::move(env)) {}

std::unique_ptr<Federation> Federation::initialize(FederationEnvironment env) {
  env.config.expected_learners = env.learners;
  env.validate();
  env.run_dir = make_run_dir(env.run_dir);
  if (env.run_id.empty()) env.run_id = fs::path(env.run_dir).filename().string();
  if (env.bin_dir.empty() && env.spawn == SpawnMode::kSubprocess) {
    env.bin_dir = executable_dir();
  }
  std::unique_ptr<Federation> fed(new Federation(std::move(env)));
  fed->start();
  return fed;
}

Federation::~Federation() { shutdown(); }

void Federation::start() {
  try {
    try {
      tls_ = generate_tls_material(env_, (fs::path(env_.run_dir) / "tls").string());
    } catch (const Error& e) {
      throw StartupFailure("tls", e.what());
    }
    if (env_.spawn == SpawnMode::kInProcess && !tls_.enabled()) {
      memory_ = std::make_unique<net::InMemoryNetwork>();
      network_ = memory_.get();
    } else {
      std::optional<net::TlsConfig> config;
      if (tls_.enabled()) config = net::TlsConfig{};
      driver_network_ = net::make_tcp_network(config);
      if (tls_.enabled()) {
        driver_network_->trust_certificate(tls::read_file(tls_.controller.cert));
        for (const auto& p : tls_.learners) {
          driver_network_->trust_certificate(tls::read_file(p.cert));
        }
      }
      network_ = driver_network_.get();
    }
    initial_model_ = build_mlp(env_.resolved_architecture(), env_.config.seed);
    start_controller();
    start_learners();
    await_registration();
    write_manifest();
  } catch (const StartupFailure&) {
    shutdown();
    throw;
  } catch (const std::exception& e) {
    shutdown();
    throw StartupFailure("driver", e.what());
  }
  monitor_ = std::thread([this] { monitor_loop(); });
}

void Federation::start_controller() {
  const auto& c = env_.config;
  const std::string log_path = controller_log_path();
  try {
    switch (env_.spawn) {
      case SpawnMode::kInProcess: {
        ControllerOptions options;
        options.listen = memory_ ? "controller" : "127.0.0.1:0";
        options.config = c;
        options.event_log_path = log_path;
        std::unique_ptr<net::Network> own;
        if (tls_.enabled()) {
          own = net::make_tcp_network(
              net::TlsConfig{tls_.controller.cert, tls_.controller.key, ""});
        }
        controller_ =
            std::make_unique<LocalController>(*network_, std::move(own), std::move(options));
        break;
      }
      case SpawnMode::kSubprocess: {
        ProcessSpec spec;
        spec.name = "controller";
        spec.program = (fs::path(env_.bin_dir) / "controller").string();
        spec.log_path = (fs::path(env_.run_dir) / "controller.log").string();
        spec.args = {"--listen", "127.0.0.1:0",
                     "--mode", c.mode == FederationMode::kAsynchronous ? "async" : "sync",
                     "--participation", format_number(c.participation),
                     "--epochs", std::to_string(c.hyperparams.epochs),
                     "--batch-size", std::to_string(c.hyperparams.batch_size),
                     "--lr", format_number(c.hyperparams.learning_rate),
                     "--seed", std::to_string(c.seed),
                     "--train-timeout", format_number(c.train_timeout_s),
                     "--eval-timeout", format_number(c.eval_timeout_s),
                     "--ack-timeout", format_number(c.ack_timeout_s),
                     "--agg-workers", std::to_string(c.aggregation_workers),
                     "--expected-learners", std::to_string(env_.learners),
                     "--event-log", log_path};
        if (c.max_rounds) {
          spec.args.insert(spec.args.end(), {"--rounds", std::to_string(*c.max_rounds)});
        }
        if (c.max_wall_clock_s) {
          spec.args.insert(spec.args.end(), {"--wall-clock", format_number(*c.max_wall_clock_s)});
        }
        if (tls_.enabled()) {
          spec.args.insert(spec.args.end(),
                           {"--cert", tls_.controller.cert, "--key", tls_.controller.key});
        }
        controller_ = std::make_unique<ChildComponent>(spec, env_.startup_timeout_s);
        break;
      }
      case SpawnMode::kAttach:
        controller_ = std::make_unique<AttachedComponent>("controller", env_.controller_endpoint,
                                                          *network_);
        break;
    }
  } catch (const StartupFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StartupFailure("controller", e.what());
  }
  // The controller acknowledges before anything else happens.
  try {
    const auto pong = net::call(*network_, controller_->endpoint(), wire::Ping{},
                                kMessageTimeoutS);
    if (!std::holds_alternative<wire::Pong>(pong)) {
      throw StartupFailure("controller", "unexpected reply to Ping");
    }
    // Tensors only: the controller never needs the architecture.
    check_ack(net::call(*network_, controller_->endpoint(),
                        wire::InitModel{"init-controller", initial_model_, std::nullopt},
                        kModelTimeoutS),
              "controller", "initial model");
  } catch (const StartupFailure&) {
    throw;
  } catch (const std::exception& e) {
    throw StartupFailure("controller", e.what());
  }
}

void Federation::start_learners() {
  const auto arch = env_.resolved_architecture();
  for (uint32_t i = 0; i < env_.learners; ++i) {
    const std::string name = learner_name(i);
    const double delay =
        i < env_.learner_train_delay_s.size() ? env_.learner_train_delay_s[i] : 0.0;
    const std::string log_path = (fs::path(env_.run_dir) / (name + ".events.jsonl")).string();
    try {
      switch (env_.spawn) {
        case SpawnMode::kInProcess: {
          LearnerOptions options;
          options.controller = controller_->endpoint();
          options.listen = memory_ ? name : "127.0.0.1:0";
          options.index = i;
          options.samples = env_.samples;
          options.input_dim = arch.input_dim;
          options.function_seed = env_.config.seed;
          options.await_model = true;
          options.train_delay_s = delay;
          options.event_log_path = log_path;
          std::unique_ptr<net::Network> own;
          if (tls_.enabled()) {
            options.cert_file = tls_.learners[i].cert;
            own = net::make_tcp_network(net::TlsConfig{
                tls_.learners[i].cert, tls_.learners[i].key, tls_.controller.cert});
          }
          learners_.push_back(std::make_unique<LocalLearner>(*network_, std::move(own),
                                                             memory_.get(), std::move(options)));
          break;
        }
        case SpawnMode::kSubprocess: {
          ProcessSpec spec;
          spec.name = name;
          spec.program = (fs::path(env_.bin_dir) / "learner").string();
          spec.log_path = (fs::path(env_.run_dir) / (name + ".log")).string();
          spec.args = {"--controller", controller_->endpoint(),
                       "--listen", "127.0.0.1:0",
                       "--index", std::to_string(i),
                       "--samples", std::to_string(env_.samples),
                       "--data-seed", std::to_string(env_.config.seed),
                       "--await-model",
                       "--event-log", log_path};
          if (delay > 0) {
            spec.args.insert(spec.args.end(), {"--train-delay-ms", format_number(delay * 1e3)});
          }
          if (tls_.enabled()) {
            spec.args.insert(spec.args.end(), {"--cert", tls_.learners[i].cert, "--key",
                                               tls_.learners[i].key, "--ca",
                                               tls_.controller.cert});
          }
          learners_.push_back(std::make_unique<ChildComponent>(spec, env_.startup_timeout_s));
          break;
        }
        case SpawnMode::kAttach:
          learners_.push_back(
              std::make_unique<AttachedComponent>(name, env_.learner_endpoints[i], *network_));
          break;
      }
      // Learners get the architecture along with the tensors, then join.
      check_ack(net::call(*network_, learners_.back()->endpoint(),
                          wire::InitModel{"init-" + name, initial_model_, arch},
                          kModelTimeoutS),
                name, "initial model");
    } catch (const StartupFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw StartupFailure(name, e.what());
    }
  }
}

void Federation::await_registration() {
  const auto deadline = time_after(env_.startup_timeout_s);
  std::string last_error = "timed out";
  while (net::Clock::now() < deadline) {
    try {
      const auto s = status();
      if (s.registered >= env_.learners) return;
      last_error = std::to_string(s.registered) + " of " + std::to_string(env_.learners) +
                   " learners registered";
    } catch (const Error& e) {
      last_error = e.what();
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  throw StartupFailure("registration", last_error);
}

const std::string& Federation::controller_endpoint() const { return controller_->endpoint(); }

std::vector<std::string> Federation::learner_endpoints() const {
  std::vector<std::string> out;
  for (const auto& l : learners_) out.push_back(l->endpoint());
  return out;
}

std::string Federation::controller_log_path() const {
  return (fs::path(env_.run_dir) / "controller.events.jsonl").string();
}

double Federation::now() const { return clock_.now(); }

wire::StatusReply Federation::status() {
  const auto reply =
      net::call(*network_, controller_->endpoint(), wire::StatusRequest{}, kMessageTimeoutS);
  const auto* s = std::get_if<wire::StatusReply>(&reply);
  if (s == nullptr) throw ProtocolError("controller answered StatusRequest with something else");
  return *s;
}

bool Federation::wait_for_completion(double timeout_s) {
  const auto deadline = time_after(timeout_s);
  while (net::Clock::now() < deadline) {
    try {
      if (status().phase == wire::Phase::kDone) return true;
    } catch (const Error&) {
      // A busy or briefly unreachable controller is not a verdict.
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  return false;
}

void Federation::monitor_loop() {
  std::vector<Component*> targets{controller_.get()};
  for (const auto& l : learners_) targets.push_back(l.get());
  std::vector<uint32_t> missed(targets.size(), 0);
  const auto interval = std::chrono::duration_cast<net::Clock::duration>(
      std::chrono::duration<double>(env_.heartbeat_interval_s));
  const double ping_timeout = std::min(env_.heartbeat_interval_s * 0.8, 5.0);
  auto next = net::Clock::now() + interval;
  while (true) {
    {
      std::unique_lock lock(mu_);
      if (cv_.wait_until(lock, next, [&] { return monitor_stopping_; })) return;
    }
    next += interval;
    std::vector<std::future<std::optional<double>>> pings;
    for (Component* c : targets) {
      pings.push_back(std::async(std::launch::async, [this, c, ping_timeout] {
        const auto t0 = net::Clock::now();
        try {
          const auto reply = net::call(*network_, c->endpoint(), wire::Ping{}, ping_timeout);
          if (std::holds_alternative<wire::Pong>(reply)) {
            return std::optional<double>(
                std::chrono::duration<double>(net::Clock::now() - t0).count());
          }
        } catch (const Error&) {
        }
        return std::optional<double>();
      }));
    }
    std::vector<HealthEvent> batch;
    for (size_t i = 0; i < targets.size(); ++i) {
      const auto latency = pings[i].get();
      missed[i] = latency ? 0 : missed[i] + 1;
      batch.push_back(HealthEvent{targets[i]->name(), missed[i] < env_.heartbeat_threshold,
                                  clock_.now(), latency, missed[i]});
    }
    {
      std::lock_guard lock(mu_);
      health_.insert(health_.end(), batch.begin(), batch.end());
    }
    cv_.notify_all();
  }
}

void Federation::stop_monitor() {
  {
    std::lock_guard lock(mu_);
    monitor_stopping_ = true;
  }
  cv_.notify_all();
  if (monitor_.joinable()) monitor_.join();
}

std::vector<HealthEvent> Federation::health_events() const {
  std::lock_guard lock(mu_);
  return health_;
}

std::optional<HealthEvent> Federation::wait_for_health(const std::string& component,
                                                       bool healthy, double timeout_s) {
  std::unique_lock lock(mu_);
  std::optional<HealthEvent> found;
  cv_.wait_for(lock, std::chrono::duration<double>(timeout_s), [&] {
    for (const auto& e : health_) {
      if (e.component == component && e.healthy == healthy) {
        found = e;
        return true;
      }
    }
    return monitor_stopping_;
  });
  return found;
}

void Federation::kill_learner(size_t index) {
  if (index >= learners_.size()) throw ConfigError("no learner " + std::to_string(index));
  if (!learners_[index]->kill()) {
    throw ConfigError("cannot kill an attached learner");
  }
}

const ShutdownReport& Federation::shutdown() {
  std::lock_guard guard(shutdown_mu_);
  if (report_) return *report_;
  stop_monitor();
  ShutdownReport report;
  auto stop_all = [&](std::vector<Component*> group, std::vector<ComponentExit>& out) {
    for (Component* c : group) {
      ComponentExit e;
      e.component = c->name();
      e.shutdown_sent = clock_.now();
      try {
        net::notify(*network_, c->endpoint(), wire::ShutDown{}, kMessageTimeoutS);
      } catch (const Error&) {
        // Already gone or unreachable; the exit wait below settles it.
      }
      out.push_back(e);
    }
    const auto deadline = time_after(env_.shutdown_grace_s);
    for (size_t i = 0; i < group.size(); ++i) {
      const double left = std::max(
          0.0, std::chrono::duration<double>(deadline - net::Clock::now()).count());
      if (!group[i]->wait_exit(left)) {
        out[i].forced = true;
        report.forced_kills.push_back(group[i]->name());
        group[i]->kill();
      }
      out[i].exited = clock_.now();
      out[i].status = group[i]->exit_status();
    }
  };
  std::vector<Component*> learners;
  for (const auto& l : learners_) learners.push_back(l.get());
  stop_all(learners, report.learners);
  if (controller_) {
    std::vector<ComponentExit> c;
    stop_all({controller_.get()}, c);
    report.controller = c.front();
  }
  report_ = std::move(report);
  return *report_;
}

std::vector<LogEvent> Federation::controller_events() const {
  return read_event_log(controller_log_path());
}

nlohmann::json Federation::manifest() const {
  nlohmann::json j = to_json(env_);
  j["created"] = std::time(nullptr);
  j["initial_model"] = {{"version", initial_model_.version},
                        {"digest", model_digest(initial_model_)}};
  auto describe = [&](const Component& c, const std::string& cert) {
    nlohmann::json d = {{"name", c.name()}, {"endpoint", c.endpoint()}};
    if (auto pid = c.pid()) d["pid"] = *pid;
    if (!cert.empty()) d["cert"] = cert;
    return d;
  };
  if (controller_) j["controller"] = describe(*controller_, tls_.controller.cert);
  j["learner_components"] = nlohmann::json::array();
  for (size_t i = 0; i < learners_.size(); ++i) {
    j["learner_components"].push_back(
        describe(*learners_[i], tls_.enabled() ? tls_.learners[i].cert : ""));
  }
  return j;
}

void Federation::write_manifest() const {
  std::ofstream out(fs::path(env_.run_dir) / "manifest.json");
  if (!out) throw IoFailure("cannot write manifest in " + env_.run_dir);
  out << manifest().dump(2) << "\n";
}

namespace {

nlohmann::json exit_json(const ComponentExit& e) {
  return {{"component", e.component},
          {"status", e.status ? nlohmann::json(*e.status) : nlohmann::json()},
          {"shutdown_sent", e.shutdown_sent},
          {"exited", e.exited},
          {"forced", e.forced}};
}

}  // namespace

RunResult run_federation(FederationEnvironment env, double timeout_s) {
  auto fed = Federation::initialize(std::move(env));
  const auto& resolved = fed->environment();
  RunResult r;
  r.completed = fed->wait_for_completion(timeout_s);
  try {
    r.status = fed->status();
  } catch (const Error&) {
  }
  r.health = fed->health_events();
  r.shutdown = fed->shutdown();
  if (resolved.spawn != SpawnMode::kAttach) {
    r.events = fed->controller_events();
    r.rounds = compute_all_rounds(r.events);
  }
  r.rows = metric_rows(resolved.run_id, resolved.framework,
                       parameter_count(resolved.resolved_architecture()), resolved.learners,
                       r.rounds);
  if (!resolved.metrics_out.empty()) append_csv(resolved.metrics_out, r.rows);

  r.manifest = fed->manifest();
  nlohmann::json shutdown;
  shutdown["learners"] = nlohmann::json::array();
  for (const auto& e : r.shutdown.learners) shutdown["learners"].push_back(exit_json(e));
  shutdown["controller"] = exit_json(r.shutdown.controller);
  shutdown["forced_kills"] = r.shutdown.forced_kills;
  r.manifest["result"] = {{"completed", r.completed},
                          {"rounds", r.status.round},
                          {"global_version", r.status.global_version},
                          {"measured_rounds", r.rounds.size()},
                          {"shutdown", shutdown}};
  std::ofstream out(fs::path(resolved.run_dir) / "manifest.json");
  if (!out) throw IoFailure("cannot write manifest in " + resolved.run_dir);
  out << r.manifest.dump(2) << "\n";
  return r;
}

}  // namespace fedlite

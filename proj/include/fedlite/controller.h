#ifndef FEDLITE_CONTROLLER_H_
#define FEDLITE_CONTROLLER_H_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedlite/aggregator.h"
#include "fedlite/event_log.h"
#include "fedlite/metrics.h"
#include "fedlite/transport.h"
#include "fedlite/wire_protocol.h"

namespace fedlite {

enum class FederationMode { kSynchronous, kAsynchronous };

struct FederationConfig {
  FederationMode mode = FederationMode::kSynchronous;
  std::optional<uint64_t> max_rounds;
  std::optional<double> max_wall_clock_s;
  double participation = 1.0;
  wire::Hyperparams hyperparams;
  uint64_t seed = 0;
  double train_timeout_s = 600;
  double eval_timeout_s = 300;
  double ack_timeout_s = 30;
  size_t aggregation_workers = 1;
  // The first round starts once this many learners are registered and the
  // initial model has arrived.
  uint32_t expected_learners = 1;

  // Throws ConfigError.
  void validate() const;
};

// True iff round_number >= max_rounds or elapsed_s >= max_wall_clock_s.
bool check_termination(uint64_t round_number, double elapsed_s,
                       const FederationConfig& config);

// Seeded uniform sample without replacement of max(1, ceil(fraction * N))
// ids, returned in id order. `ids` must be sorted.
std::vector<std::string> select_participants(const std::vector<std::string>& ids,
                                             double fraction, uint64_t seed,
                                             uint64_t round);

struct LearnerDescriptor {
  std::string id;
  std::string endpoint;
  uint64_t num_samples = 0;
  std::optional<std::string> public_cert;
};

struct TaskAssignment {
  std::string task_id;
  LearnerDescriptor learner;
};

// Side effects requested by the engine. The runtime implements them with
// real I/O; tests record them.
class ControllerEffects {
 public:
  virtual ~ControllerEffects() = default;
  // Must not block on the learners: results come back as engine events.
  virtual void dispatch_train(uint64_t round, const std::vector<TaskAssignment>& tasks,
                              std::shared_ptr<const ModelState> model,
                              const wire::Hyperparams& hyperparams) = 0;
  virtual void dispatch_eval(uint64_t round, const std::vector<TaskAssignment>& tasks,
                             std::shared_ptr<const ModelState> model) = 0;
  virtual void arm_train_deadline(uint64_t round, double seconds) = 0;
  virtual void federation_finished() = 0;
};

struct RoundRecord {
  uint64_t round = 0;
  std::vector<std::string> participants;
  std::vector<std::string> aggregated;   // learners whose models were averaged
  std::set<std::string> unavailable;     // dispatch failures
  std::set<std::string> stragglers;      // missed the train deadline
  std::map<std::string, double> losses;
  std::map<std::string, std::string> eval_failures;
  uint64_t model_version = 0;
  uint64_t model_digest = 0;
  bool aborted = false;
  std::optional<RoundMetrics> metrics;   // measured online
};

// The controller's round state machine. Not thread-safe: the runtime feeds
// it one event at a time from a single queue. Timestamps come from the log
// clock (or are passed in when the runtime took them at receipt).
class FederationEngine {
 public:
  FederationEngine(FederationConfig config, ControllerEffects& effects, EventLog& log);

  // Upserts the registry. Rejects empty ids or endpoints and certificates that
  // do not parse.
  wire::JoinAck on_join(const wire::JoinFederation& msg);
  void on_initial_model(ModelState model);
  void on_train_ack(uint64_t round, const std::string& task_id, bool ok, double t,
                    const std::string& error = "");
  void on_task_completed(const wire::MarkTaskCompleted& msg, double t);
  void on_train_deadline(uint64_t round);
  void on_eval_sent(uint64_t round, const std::string& learner_id, double t);
  void on_eval_result(uint64_t round, const std::string& learner_id,
                      std::optional<double> loss, double t,
                      const std::string& error = "");
  // Periodic check of the wall-clock limit.
  void on_tick();

  wire::StatusReply status() const;
  wire::Phase phase() const { return phase_; }
  uint64_t round_number() const { return round_number_; }
  uint64_t completed_rounds() const { return completed_rounds_; }
  const ModelState* global_model() const { return global_.get(); }
  const std::map<std::string, LearnerDescriptor>& registry() const { return registry_; }
  const std::vector<RoundRecord>& history() const { return history_; }
  // Accepted completions per learner (asynchronous mode).
  const std::map<std::string, uint64_t>& completions() const { return completions_; }
  const std::set<std::string>& pending_train() const { return pending_train_; }
  bool finished() const { return phase_ == wire::Phase::kDone; }

 private:
  struct Pending {
    std::string learner_id;
    bool acked = false;
  };

  void maybe_start();
  void start_round();
  void start_async();
  void dispatch_async(const std::string& learner_id);
  void handle_async_completion(const wire::MarkTaskCompleted& msg, double t);
  void maybe_aggregate();
  void aggregate();
  void start_eval();
  void maybe_finish_eval();
  void abort_round(const std::string& why);
  void next_round_or_finish();
  void finish(const std::string& reason);
  bool shapes_match(const ModelState& model) const;
  RoundRecord& current();

  FederationConfig config_;
  ControllerEffects& effects_;
  EventLog& log_;
  std::map<std::string, LearnerDescriptor> registry_;
  std::shared_ptr<const ModelState> global_;
  ModelStore store_;
  wire::Phase phase_ = wire::Phase::kWaiting;
  bool started_ = false;
  uint64_t round_number_ = 0;
  uint64_t completed_rounds_ = 0;
  double start_time_ = 0;

  // Synchronous round state.
  std::map<std::string, Pending> tasks_;  // task id -> state, this round
  std::set<std::string> pending_train_;   // task ids without a completion
  size_t outstanding_dispatch_ = 0;
  std::vector<std::string> received_;     // learner ids, arrival order
  std::set<std::string> pending_eval_;
  RoundTimeline timeline_;
  std::vector<RoundRecord> history_;

  // Asynchronous state.
  uint64_t async_task_counter_ = 0;
  std::map<std::string, std::string> async_outstanding_;  // learner -> task id
  std::map<std::string, uint64_t> completions_;
};

struct ControllerOptions {
  std::string listen = "127.0.0.1:0";
  FederationConfig config;
  std::string event_log_path;
};

// Network runtime around FederationEngine: accepts registrations,
// completions, driver requests; performs dispatch I/O on worker threads and
// feeds results back through one ordered event queue.
class ControllerService {
 public:
  ControllerService(net::Network& network, ControllerOptions options);
  ~ControllerService();
  ControllerService(const ControllerService&) = delete;
  ControllerService& operator=(const ControllerService&) = delete;

  const std::string& endpoint() const;
  // Blocks until a ShutDown message arrives (or stop() is called).
  void wait_for_shutdown();
  void stop();
  bool shutdown_requested() const;

  // Runs `fn` on the engine thread and waits for it.
  void inspect(const std::function<void(const FederationEngine&)>& fn);
  std::vector<LogEvent> events() const { return log_.events(); }

 private:
  class Effects;

  void post(std::function<void()> fn);
  void queue_loop();
  void timer_loop();
  void handle(net::Channel& channel);
  void spawn(std::function<void()> fn);
  void track(const std::shared_ptr<net::Connection>& c);
  void untrack(const std::shared_ptr<net::Connection>& c);

  net::Network& network_;
  ControllerOptions options_;
  EventLog log_;
  std::unique_ptr<Effects> effects_;
  std::unique_ptr<FederationEngine> engine_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<std::function<void()>> queue_;
  bool queue_stopping_ = false;

  std::mutex timer_mu_;
  std::condition_variable timer_cv_;
  std::multimap<net::Clock::time_point, uint64_t> deadlines_;
  bool timer_stopping_ = false;

  std::mutex workers_mu_;
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::list<Worker> workers_;
  std::set<std::shared_ptr<net::Connection>> live_;
  bool workers_stopping_ = false;

  mutable std::mutex shutdown_mu_;
  std::condition_variable shutdown_cv_;
  bool shutdown_requested_ = false;
  bool stopped_ = false;

  std::thread queue_thread_;
  std::thread timer_thread_;
  std::unique_ptr<net::Server> server_;
};

}  // namespace fedlite

#endif  // FEDLITE_CONTROLLER_H_

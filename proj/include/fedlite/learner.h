#ifndef FEDLITE_LEARNER_H_
#define FEDLITE_LEARNER_H_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedlite/errors.h"
#include "fedlite/event_log.h"
#include "fedlite/model_engine.h"
#include "fedlite/transport.h"
#include "fedlite/wire_protocol.h"

namespace fedlite {

class JoinRejected : public Error {
 public:
  using Error::Error;
};

struct LearnerOptions {
  std::string controller;
  std::string listen = "127.0.0.1:0";
  uint32_t index = 0;
  uint32_t samples = 100;
  uint32_t input_dim = 13;
  uint64_t function_seed = 0;  // shared by all learners of a federation
  std::string learner_id;      // default "learner-<index>"
  // Join only after the driver has shipped the model (InitModel).
  bool await_model = false;
  // Extra time spent before every training task (fault injection).
  double train_delay_s = 0;
  // On ShutDown, finish queued work instead of dropping it.
  bool drain_on_shutdown = false;
  std::string event_log_path;
  std::string cert_file;  // presented at JoinFederation when set
  size_t queue_bound = 16;
  std::vector<double> retry_backoff_s = {1, 2, 4};
  double join_timeout_s = 30;
};

struct LearnerCounters {
  uint64_t accepted = 0;
  uint64_t refused = 0;
  uint64_t completions_sent = 0;
  uint64_t completions_dropped = 0;
  uint64_t failures = 0;
  uint64_t evaluations = 0;
  uint64_t max_concurrent = 0;  // executor slots ever busy at once
};

struct ExecSpan {
  bool train = true;
  std::string task_id;
  double start = 0;
  double end = 0;
};

class LearnerService {
 public:
  LearnerService(net::Network& network, LearnerOptions options);
  ~LearnerService();
  LearnerService(const LearnerService&) = delete;
  LearnerService& operator=(const LearnerService&) = delete;

  const std::string& endpoint() const { return server_->endpoint(); }
  const std::string& id() const { return id_; }

  // Joins right away unless await_model is set. Throws JoinRejected or
  // TransportError.
  void start();
  // Blocks until ShutDown arrives, a deferred join fails, or stop().
  void wait_for_shutdown();
  // Stops serving, then drains or abandons queued work per the options.
  void stop();
  // 0 after a normal shutdown, nonzero when joining failed.
  int exit_code() const;

  LearnerCounters counters() const;
  std::vector<ExecSpan> trace() const;
  const Dataset& train_data() const { return train_; }
  const Dataset& test_data() const { return test_; }

 private:
  struct Job {
    std::shared_ptr<const wire::RunTask> run;         // train when set
    std::shared_ptr<const wire::EvaluateModel> eval;  // eval otherwise
    std::shared_future<void> released;  // set once the Ack is on the wire
    std::shared_ptr<std::promise<std::optional<double>>> loss;
  };

  void join();
  void handle(net::Channel& channel);
  void executor_loop();
  void sender_loop();
  void run_training(const wire::RunTask& task);
  bool sleep_unless_stopping(double seconds);
  void request_shutdown(int code);

  net::Network& network_;
  LearnerOptions options_;
  std::string id_;
  Dataset train_;
  Dataset test_;
  std::optional<MlpArchitecture> architecture_;
  EventLog log_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  size_t pending_train_ = 0;
  bool busy_ = false;
  size_t running_ = 0;
  std::deque<std::shared_ptr<const wire::MarkTaskCompleted>> outbox_;
  bool sending_ = false;
  bool stopping_ = false;
  bool joined_ = false;
  bool shutdown_requested_ = false;
  bool stopped_ = false;
  int exit_code_ = 0;
  LearnerCounters counters_;
  std::vector<ExecSpan> trace_;

  std::thread executor_;
  std::thread sender_;
  std::unique_ptr<net::Server> server_;
};

}  // namespace fedlite

#endif  // FEDLITE_LEARNER_H_

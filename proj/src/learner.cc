#include "fedlite/learner.h"

#include "fedlite/tls.h"

namespace fedlite {

LearnerService::LearnerService(net::Network& network, LearnerOptions options)
    : network_(network),
      options_(std::move(options)),
      id_(options_.learner_id.empty() ? "learner-" + std::to_string(options_.index)
                                      : options_.learner_id),
      train_(generate_dataset(options_.samples, options_.input_dim,
                              options_.function_seed, 2 * uint64_t{options_.index})),
      test_(generate_dataset(options_.samples, options_.input_dim,
                             options_.function_seed, 2 * uint64_t{options_.index} + 1)),
      log_(options_.event_log_path) {
  executor_ = std::thread([this] { executor_loop(); });
  sender_ = std::thread([this] { sender_loop(); });
  try {
    server_ = std::make_unique<net::Server>(network_, options_.listen,
                                            [this](net::Channel& ch) { handle(ch); });
  } catch (...) {
    stop();
    throw;
  }
  log_.record(0, "learner_listening", id_, 0, {{"endpoint", server_->endpoint()}});
}

LearnerService::~LearnerService() { stop(); }

void LearnerService::start() {
  if (!options_.await_model) join();
}

void LearnerService::join() {
  wire::JoinFederation msg{id_, endpoint(), options_.samples, std::nullopt};
  if (!options_.cert_file.empty()) msg.public_cert = tls::read_file(options_.cert_file);
  // The controller may still be coming up; retry plain connection failures.
  wire::Message reply;
  for (int attempt = 0;; ++attempt) {
    try {
      reply = net::call(network_, options_.controller, msg, options_.join_timeout_s);
      break;
    } catch (const TimeoutError&) {
      throw;
    } catch (const TransportError&) {
      if (attempt >= 20 || !sleep_unless_stopping(0.25)) throw;
    }
  }
  const auto* ack = std::get_if<wire::JoinAck>(&reply);
  if (ack == nullptr || !ack->accepted) {
    log_.record(0, "join_rejected", id_);
    throw JoinRejected("controller rejected learner " + id_);
  }
  {
    std::lock_guard lock(mu_);
    joined_ = true;
  }
  log_.record(0, "joined", id_, 0, {{"controller", options_.controller}});
}

void LearnerService::handle(net::Channel& ch) {
  try {
    while (auto m = ch.receive()) {
      if (auto* run = std::get_if<wire::RunTask>(&*m)) {
        const std::string task_id = run->task_id;
        bool ok = true;
        try {
          validate_model(run->model);
        } catch (const Error&) {
          ok = false;
        }
        // The executor holds the job until the Ack is written, so the Ack
        // always precedes the first training step.
        std::promise<void> release;
        {
          std::lock_guard lock(mu_);
          if (!ok || stopping_ || pending_train_ >= options_.queue_bound) {
            ok = false;
            ++counters_.refused;
          } else {
            ++pending_train_;
            ++counters_.accepted;
            jobs_.push_back(Job{std::make_shared<const wire::RunTask>(std::move(*run)),
                                nullptr, release.get_future().share(), nullptr});
          }
        }
        cv_.notify_all();
        struct Release {
          std::promise<void>& p;
          ~Release() { p.set_value(); }
        } guard{release};
        ch.send(wire::Ack{task_id, ok});
        log_.record(0, ok ? "task_accepted" : "task_refused", id_, 0,
                    {{"task_id", task_id}});
      } else if (auto* eval = std::get_if<wire::EvaluateModel>(&*m)) {
        const std::string task_id = eval->task_id;
        auto loss = std::make_shared<std::promise<std::optional<double>>>();
        auto result = loss->get_future();
        std::promise<void> ready;
        ready.set_value();
        {
          std::lock_guard lock(mu_);
          if (stopping_) return;
          jobs_.push_back(Job{nullptr,
                              std::make_shared<const wire::EvaluateModel>(std::move(*eval)),
                              ready.get_future().share(), loss});
        }
        cv_.notify_all();
        const auto value = result.get();
        if (!value) {
          ch.send(wire::Ack{"", false});
          return;
        }
        ch.send(wire::EvalReply{task_id, *value});
      } else if (auto* init = std::get_if<wire::InitModel>(&*m)) {
        if (init->architecture) {
          std::lock_guard lock(mu_);
          architecture_ = init->architecture;
        }
        ch.send(wire::Ack{init->task_id, true});
        bool need_join = false;
        {
          std::lock_guard lock(mu_);
          need_join = options_.await_model && !joined_ && !stopping_;
        }
        if (need_join) {
          try {
            join();
          } catch (const std::exception& e) {
            log_.record(0, "join_failed", id_, 0, {{"error", e.what()}});
            request_shutdown(3);
          }
        }
      } else if (std::holds_alternative<wire::Ping>(*m)) {
        ch.send(wire::Pong{});
      } else if (std::holds_alternative<wire::ShutDown>(*m)) {
        log_.record(0, "shutdown_received", id_);
        request_shutdown(0);
        return;
      } else {
        ch.send(wire::Ack{"", false});
        return;
      }
    }
  } catch (const ProtocolError&) {
    try {
      ch.send(wire::Ack{"", false});
    } catch (const Error&) {
    }
  }
}

void LearnerService::executor_loop() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
      if (jobs_.empty()) return;
      job = std::move(jobs_.front());
      jobs_.pop_front();
      busy_ = true;
    }
    job.released.wait();
    ExecSpan span{job.run != nullptr, job.run ? job.run->task_id : job.eval->task_id,
                  log_.now(), 0};
    {
      std::lock_guard lock(mu_);
      ++running_;
      counters_.max_concurrent = std::max<uint64_t>(counters_.max_concurrent, running_);
    }
    if (job.run) {
      run_training(*job.run);
    } else {
      std::optional<double> loss;
      try {
        loss = evaluate(job.eval->model, test_);
      } catch (const Error& e) {
        log_.record(0, "eval_failed", id_, 0,
                    {{"task_id", job.eval->task_id}, {"error", e.what()}});
      }
      job.loss->set_value(loss);
    }
    span.end = log_.now();
    {
      std::lock_guard lock(mu_);
      if (job.run) --pending_train_;
      if (!job.run) ++counters_.evaluations;
      --running_;
      busy_ = false;
      trace_.push_back(span);
    }
    cv_.notify_all();
  }
}

void LearnerService::run_training(const wire::RunTask& task) {
  if (options_.train_delay_s > 0 && !sleep_unless_stopping(options_.train_delay_s)) {
    return;
  }
  const double t0 = log_.now();
  std::optional<MlpArchitecture> arch;
  {
    std::lock_guard lock(mu_);
    arch = architecture_;
  }
  try {
    if (arch && task.model.tensors.size() != 2 * (arch->hidden_layers + 1)) {
      throw ShapeMismatch("model does not match the announced architecture");
    }
    auto [model, stats] =
        sgd_train(task.model, train_,
                  TrainOptions{task.hyperparams.epochs, task.hyperparams.batch_size,
                               task.hyperparams.learning_rate});
    auto done = std::make_shared<wire::MarkTaskCompleted>();
    done->task_id = task.task_id;
    done->learner_id = id_;
    done->model = std::move(model);
    done->stats = stats;
    log_.record(0, "task_trained", id_, (log_.now() - t0) * 1e3,
                {{"task_id", task.task_id}, {"steps", stats.completed_steps}});
    {
      std::lock_guard lock(mu_);
      outbox_.push_back(std::move(done));
    }
    cv_.notify_all();
  } catch (const Error& e) {
    {
      std::lock_guard lock(mu_);
      ++counters_.failures;
    }
    log_.record(0, "task_failed", id_, 0, {{"task_id", task.task_id}, {"error", e.what()}});
  }
}

void LearnerService::sender_loop() {
  while (true) {
    std::shared_ptr<const wire::MarkTaskCompleted> msg;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !outbox_.empty(); });
      if (outbox_.empty()) return;
      msg = outbox_.front();
      outbox_.pop_front();
      sending_ = true;
    }
    bool delivered = false;
    for (size_t attempt = 0;; ++attempt) {
      try {
        const auto reply = net::call(network_, options_.controller, *msg, 30);
        const auto* ack = std::get_if<wire::Ack>(&reply);
        delivered = ack != nullptr && ack->status;
      } catch (const Error& e) {
        log_.record(0, "completion_send_failed", id_, 0,
                    {{"task_id", msg->task_id}, {"attempt", attempt}, {"error", e.what()}});
      }
      if (delivered || attempt >= options_.retry_backoff_s.size()) break;
      if (!sleep_unless_stopping(options_.retry_backoff_s[attempt])) break;
    }
    {
      std::lock_guard lock(mu_);
      ++(delivered ? counters_.completions_sent : counters_.completions_dropped);
      sending_ = false;
    }
    cv_.notify_all();
    log_.record(0, delivered ? "completion_sent" : "completion_dropped", id_, 0,
                {{"task_id", msg->task_id}});
  }
}

bool LearnerService::sleep_unless_stopping(double seconds) {
  std::unique_lock lock(mu_);
  return !cv_.wait_for(lock, std::chrono::duration<double>(seconds),
                       [&] { return stopping_; });
}

void LearnerService::request_shutdown(int code) {
  {
    std::lock_guard lock(mu_);
    shutdown_requested_ = true;
    if (exit_code_ == 0) exit_code_ = code;
  }
  cv_.notify_all();
}

void LearnerService::wait_for_shutdown() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return shutdown_requested_ || stopped_; });
}

void LearnerService::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopped_) return;
    stopped_ = true;
  }
  cv_.notify_all();
  if (server_) server_->stop();
  {
    std::unique_lock lock(mu_);
    if (options_.drain_on_shutdown) {
      cv_.wait(lock, [&] { return jobs_.empty() && !busy_ && outbox_.empty() && !sending_; });
    } else {
      for (auto& job : jobs_) {
        if (job.loss) job.loss->set_value(std::nullopt);
      }
      jobs_.clear();
      outbox_.clear();
    }
    stopping_ = true;
  }
  cv_.notify_all();
  if (executor_.joinable()) executor_.join();
  if (sender_.joinable()) sender_.join();
}

int LearnerService::exit_code() const {
  std::lock_guard lock(mu_);
  return exit_code_;
}

LearnerCounters LearnerService::counters() const {
  std::lock_guard lock(mu_);
  return counters_;
}

std::vector<ExecSpan> LearnerService::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

}  // namespace fedlite

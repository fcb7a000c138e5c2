#include "fedlite/controller.h"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "fedlite/errors.h"
#include "fedlite/tls.h"

namespace fedlite {

void FederationConfig::validate() const {
  if (!max_rounds && !max_wall_clock_s) {
    throw ConfigError("set max_rounds or max_wall_clock_s");
  }
  if (max_rounds && *max_rounds == 0) throw ConfigError("max_rounds must be positive");
  if (max_wall_clock_s && !(*max_wall_clock_s >= 0)) {
    throw ConfigError("max_wall_clock_s must not be negative");
  }
  if (!(participation > 0 && participation <= 1)) {
    throw ConfigError("participation must be in (0, 1]");
  }
  if (hyperparams.epochs == 0 || hyperparams.batch_size == 0) {
    throw ConfigError("epochs and batch_size must be positive");
  }
  if (!(hyperparams.learning_rate >= 0)) throw ConfigError("learning rate must be >= 0");
  if (!(train_timeout_s > 0) || !(eval_timeout_s > 0) || !(ack_timeout_s > 0)) {
    throw ConfigError("timeouts must be positive");
  }
  if (aggregation_workers == 0) throw ConfigError("aggregation_workers must be >= 1");
  if (expected_learners == 0) throw ConfigError("expected_learners must be >= 1");
}

bool check_termination(uint64_t round_number, double elapsed_s,
                       const FederationConfig& config) {
  if (config.max_rounds && round_number >= *config.max_rounds) return true;
  if (config.max_wall_clock_s && elapsed_s >= *config.max_wall_clock_s) return true;
  return false;
}

namespace {

// Uniform integer in [0, bound) by rejection, independent of the standard
// library's distribution implementation.
uint64_t bounded(std::mt19937_64& rng, uint64_t bound) {
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::vector<std::string> select_participants(const std::vector<std::string>& ids,
                                             double fraction, uint64_t seed,
                                             uint64_t round) {
  const size_t n = ids.size();
  if (n == 0) return {};
  size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  k = std::clamp<size_t>(k, 1, n);
  if (k == n) return ids;
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(round), static_cast<uint32_t>(round >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + bounded(rng, n - i)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (size_t i : idx) out.push_back(ids[i]);
  return out;
}

// ---------------------------------------------------------------------------
// FederationEngine

FederationEngine::FederationEngine(FederationConfig config, ControllerEffects& effects,
                                   EventLog& log)
    : config_(std::move(config)), effects_(effects), log_(log) {
  config_.validate();
}

wire::JoinAck FederationEngine::on_join(const wire::JoinFederation& msg) {
  std::string problem;
  if (msg.learner_id.empty()) {
    problem = "empty learner id";
  } else if (msg.endpoint.empty() ||
             msg.endpoint.find_first_of(" \t\r\n") != std::string::npos) {
    problem = "malformed endpoint";
  } else if (msg.public_cert && !tls::is_certificate(*msg.public_cert)) {
    problem = "public certificate does not parse";
  }
  if (!problem.empty()) {
    log_.record(round_number_, "join_rejected", msg.learner_id, 0,
                {{"reason", problem}});
    return wire::JoinAck{false};
  }
  const bool known = registry_.contains(msg.learner_id);
  registry_[msg.learner_id] =
      LearnerDescriptor{msg.learner_id, msg.endpoint, msg.num_samples, msg.public_cert};
  log_.record(round_number_, "learner_joined", msg.learner_id, 0,
              {{"endpoint", msg.endpoint},
               {"rejoin", known},
               {"certificate", msg.public_cert.has_value()},
               {"registered", registry_.size()}});
  if (started_ && config_.mode == FederationMode::kAsynchronous && !finished() &&
      !async_outstanding_.contains(msg.learner_id)) {
    dispatch_async(msg.learner_id);
  }
  maybe_start();
  return wire::JoinAck{true};
}

void FederationEngine::on_initial_model(ModelState model) {
  validate_model(model);
  if (started_) {
    log_.record(round_number_, "initial_model_ignored");
    return;
  }
  log_.record(0, "initial_model", "", 0,
              {{"tensors", model.tensors.size()},
               {"parameters", parameter_count(model)},
               {"version", model.version}});
  global_ = std::make_shared<const ModelState>(std::move(model));
  maybe_start();
}

void FederationEngine::maybe_start() {
  if (started_ || !global_ || registry_.size() < config_.expected_learners) return;
  started_ = true;
  start_time_ = log_.now();
  if (check_termination(0, 0, config_)) {
    finish("termination criterion met before the first round");
    return;
  }
  if (config_.mode == FederationMode::kSynchronous) {
    start_round();
  } else {
    start_async();
  }
}

RoundRecord& FederationEngine::current() { return history_.back(); }

void FederationEngine::start_round() {
  ++round_number_;
  phase_ = wire::Phase::kTraining;
  tasks_.clear();
  pending_train_.clear();
  received_.clear();
  pending_eval_.clear();
  timeline_ = RoundTimeline{};

  std::vector<std::string> ids;
  for (const auto& [id, _] : registry_) ids.push_back(id);
  auto participants =
      select_participants(ids, config_.participation, config_.seed, round_number_);

  timeline_.start = log_.now();
  log_.record(LogEvent{timeline_.start, round_number_, std::string(ev::kRoundStart), "",
                       0,
                       {{"participants", participants.size()},
                        {"registered", registry_.size()},
                        {"model_version", global_->version}}});
  RoundRecord record;
  record.round = round_number_;
  record.participants = participants;
  history_.push_back(std::move(record));

  std::vector<TaskAssignment> assignments;
  for (const auto& id : participants) {
    const std::string task_id = "r" + std::to_string(round_number_) + "-" + id;
    tasks_[task_id] = Pending{id, false};
    pending_train_.insert(task_id);
    assignments.push_back(TaskAssignment{task_id, registry_.at(id)});
  }
  outstanding_dispatch_ = assignments.size();
  effects_.arm_train_deadline(round_number_, config_.train_timeout_s);
  effects_.dispatch_train(round_number_, assignments, global_, config_.hyperparams);
}

void FederationEngine::on_train_ack(uint64_t round, const std::string& task_id,
                                    bool ok, double t, const std::string& error) {
  if (config_.mode == FederationMode::kAsynchronous) {
    for (auto it = async_outstanding_.begin(); it != async_outstanding_.end(); ++it) {
      if (it->second != task_id) continue;
      if (ok) {
        log_.record(LogEvent{t, round_number_, std::string(ev::kTrainAck), it->first});
      } else {
        log_.record(LogEvent{t, round_number_, std::string(ev::kTrainDispatchFailed),
                             it->first, 0, {{"task_id", task_id}, {"error", error}}});
        async_outstanding_.erase(it);
      }
      return;
    }
    return;
  }
  if (round != round_number_ || phase_ != wire::Phase::kTraining) return;
  auto it = tasks_.find(task_id);
  if (it == tasks_.end() || it->second.acked) return;
  it->second.acked = true;
  --outstanding_dispatch_;
  timeline_.train_dispatch_end = std::max(timeline_.train_dispatch_end, t);
  const std::string& learner = it->second.learner_id;
  if (ok) {
    log_.record(LogEvent{t, round, std::string(ev::kTrainAck), learner, 0,
                         {{"task_id", task_id}}});
  } else {
    log_.record(LogEvent{t, round, std::string(ev::kTrainDispatchFailed), learner, 0,
                         {{"task_id", task_id}, {"error", error}}});
    current().unavailable.insert(learner);
    pending_train_.erase(task_id);
  }
  maybe_aggregate();
}

bool FederationEngine::shapes_match(const ModelState& model) const {
  if (!global_ || model.tensors.size() != global_->tensors.size()) return false;
  for (size_t i = 0; i < model.tensors.size(); ++i) {
    const auto& a = model.tensors[i];
    const auto& b = global_->tensors[i];
    if (a.name != b.name || a.shape != b.shape || a.dtype != b.dtype) return false;
  }
  return true;
}

void FederationEngine::on_task_completed(const wire::MarkTaskCompleted& msg, double t) {
  if (config_.mode == FederationMode::kAsynchronous) {
    handle_async_completion(msg, t);
    return;
  }
  auto it = tasks_.find(msg.task_id);
  if (phase_ != wire::Phase::kTraining || !pending_train_.contains(msg.task_id) ||
      it == tasks_.end() || it->second.learner_id != msg.learner_id) {
    log_.record(LogEvent{t, round_number_, "stale_completion", msg.learner_id, 0,
                         {{"task_id", msg.task_id}}});
    return;
  }
  Pending& task = it->second;
  if (!task.acked) {
    // The completion proves the task was accepted; the Ack is still in flight.
    task.acked = true;
    --outstanding_dispatch_;
    timeline_.train_dispatch_end = std::max(timeline_.train_dispatch_end, t);
    log_.record(LogEvent{t, round_number_, std::string(ev::kTrainAck), msg.learner_id,
                         0, {{"task_id", msg.task_id}, {"implicit", true}}});
  }
  pending_train_.erase(msg.task_id);
  timeline_.train_end = std::max(timeline_.train_end, t);
  bool valid = true;
  try {
    validate_model(msg.model);
  } catch (const Error&) {
    valid = false;
  }
  if (!valid || !shapes_match(msg.model)) {
    log_.record(LogEvent{t, round_number_, "completion_rejected", msg.learner_id, 0,
                         {{"task_id", msg.task_id}, {"reason", "model shape mismatch"}}});
    current().unavailable.insert(msg.learner_id);
    maybe_aggregate();
    return;
  }
  uint64_t samples = msg.stats.num_training_samples;
  if (samples == 0) samples = std::max<uint64_t>(1, registry_[msg.learner_id].num_samples);
  store_.insert(msg.learner_id, msg.model, samples);
  received_.push_back(msg.learner_id);
  log_.record(LogEvent{t, round_number_, std::string(ev::kTaskCompleted), msg.learner_id,
                       msg.stats.time_per_batch_ms *
                           static_cast<double>(msg.stats.completed_steps),
                       {{"task_id", msg.task_id},
                        {"time_per_batch_ms", msg.stats.time_per_batch_ms},
                        {"steps", msg.stats.completed_steps},
                        {"epochs", msg.stats.completed_epochs},
                        {"samples", samples}}});
  maybe_aggregate();
}

void FederationEngine::maybe_aggregate() {
  if (phase_ != wire::Phase::kTraining || outstanding_dispatch_ != 0 ||
      !pending_train_.empty()) {
    return;
  }
  if (received_.empty()) {
    abort_round("no participant delivered a model");
  } else {
    aggregate();
  }
}

void FederationEngine::on_train_deadline(uint64_t round) {
  if (config_.mode != FederationMode::kSynchronous || round != round_number_ ||
      phase_ != wire::Phase::kTraining) {
    return;
  }
  const double t = log_.now();
  auto& record = current();
  for (auto& [task_id, task] : tasks_) {
    if (pending_train_.contains(task_id) || !task.acked) {
      record.stragglers.insert(task.learner_id);
      task.acked = true;
    }
  }
  pending_train_.clear();
  outstanding_dispatch_ = 0;
  timeline_.train_end = std::max(timeline_.train_end, t);
  timeline_.train_dispatch_end = std::min(
      std::max(timeline_.train_dispatch_end, timeline_.start), timeline_.train_end);
  log_.record(LogEvent{t, round, std::string(ev::kTrainTimeout), "", 0,
                       {{"stragglers", record.stragglers.size()},
                        {"received", received_.size()}}});
  maybe_aggregate();
}

void FederationEngine::aggregate() {
  phase_ = wire::Phase::kAggregating;
  auto& record = current();
  std::sort(received_.begin(), received_.end());
  timeline_.aggregation_begin = log_.now();
  log_.record(LogEvent{timeline_.aggregation_begin, round_number_,
                       std::string(ev::kAggregationBegin), "", 0,
                       {{"models", received_.size()}}});
  const auto stored = store_.select(received_);
  const AggregationPlan plan = make_plan(received_, stored, config_.aggregation_workers);
  std::vector<WeightedModel> inputs;
  for (size_t i = 0; i < stored.size(); ++i) {
    inputs.push_back(WeightedModel{stored[i].model.get(), plan.weights[i]});
  }
  ModelState result = fedavg(inputs, plan.worker_count);
  result.version = global_->version + 1;
  timeline_.aggregation_end = log_.now();
  const uint64_t digest = model_digest(result);
  log_.record(LogEvent{timeline_.aggregation_end, round_number_,
                       std::string(ev::kAggregationEnd), "",
                       (timeline_.aggregation_end - timeline_.aggregation_begin) * 1e3,
                       {{"models", received_.size()},
                        {"workers", plan.worker_count},
                        {"model_version", result.version},
                        {"model_digest", digest}}});
  record.aggregated = received_;
  record.model_version = result.version;
  record.model_digest = digest;
  global_ = std::make_shared<const ModelState>(std::move(result));
  start_eval();
}

void FederationEngine::start_eval() {
  phase_ = wire::Phase::kEvaluating;
  auto& record = current();
  timeline_.eval_dispatch_end = timeline_.aggregation_end;
  timeline_.eval_end = timeline_.aggregation_end;
  std::vector<TaskAssignment> assignments;
  for (const auto& id : record.participants) {
    if (record.unavailable.contains(id)) continue;
    pending_eval_.insert(id);
    assignments.push_back(TaskAssignment{
        "e" + std::to_string(round_number_) + "-" + id, registry_.at(id)});
  }
  if (assignments.empty()) {
    maybe_finish_eval();
    return;
  }
  effects_.dispatch_eval(round_number_, assignments, global_);
}

void FederationEngine::on_eval_sent(uint64_t round, const std::string& learner_id,
                                    double t) {
  if (round != round_number_ || phase_ != wire::Phase::kEvaluating ||
      !pending_eval_.contains(learner_id)) {
    return;
  }
  timeline_.eval_dispatch_end = std::max(timeline_.eval_dispatch_end, t);
  log_.record(LogEvent{t, round, std::string(ev::kEvalRequestSent), learner_id});
}

void FederationEngine::on_eval_result(uint64_t round, const std::string& learner_id,
                                      std::optional<double> loss, double t,
                                      const std::string& error) {
  if (round != round_number_ || phase_ != wire::Phase::kEvaluating ||
      !pending_eval_.contains(learner_id)) {
    return;
  }
  pending_eval_.erase(learner_id);
  timeline_.eval_end = std::max(timeline_.eval_end, t);
  auto& record = current();
  if (loss) {
    record.losses[learner_id] = *loss;
    log_.record(LogEvent{t, round, std::string(ev::kEvalReply), learner_id, 0,
                         {{"loss", *loss}}});
  } else {
    record.eval_failures[learner_id] = error;
    log_.record(LogEvent{t, round, std::string(ev::kEvalFailed), learner_id, 0,
                         {{"error", error}}});
  }
  maybe_finish_eval();
}

void FederationEngine::maybe_finish_eval() {
  if (!pending_eval_.empty()) return;
  auto& record = current();
  const RoundMetrics m = metrics_from_timeline(round_number_, timeline_);
  record.metrics = m;
  nlohmann::json online;
  for (auto name : kMetricNames) online[std::string(name)] = metric_value(m, name);
  log_.record(LogEvent{timeline_.eval_end, round_number_, std::string(ev::kRoundEnd), "",
                       m.federation_round_s * 1e3,
                       {{"model_version", global_->version},
                        {"losses", record.losses.size()},
                        {"eval_failures", record.eval_failures.size()},
                        {"online", online}}});
  ++completed_rounds_;
  next_round_or_finish();
}

void FederationEngine::abort_round(const std::string& why) {
  current().aborted = true;
  log_.record(round_number_, std::string(ev::kRoundAborted), "", 0, {{"reason", why}});
  next_round_or_finish();
}

void FederationEngine::next_round_or_finish() {
  if (check_termination(round_number_, log_.now() - start_time_, config_)) {
    finish("termination criterion met");
  } else {
    start_round();
  }
}

void FederationEngine::finish(const std::string& reason) {
  phase_ = wire::Phase::kDone;
  log_.record(round_number_, "federation_complete", "", 0,
              {{"reason", reason},
               {"rounds", round_number_},
               {"completed_rounds", completed_rounds_},
               {"model_version", global_ ? global_->version : 0}});
  effects_.federation_finished();
}

void FederationEngine::on_tick() {
  if (!started_ || finished()) return;
  // Synchronous rounds end at round boundaries; see next_round_or_finish().
  if (config_.mode == FederationMode::kAsynchronous &&
      check_termination(round_number_, log_.now() - start_time_, config_)) {
    finish("termination criterion met");
  }
}

void FederationEngine::start_async() {
  phase_ = wire::Phase::kTraining;
  std::vector<std::string> ids;
  for (const auto& [id, _] : registry_) ids.push_back(id);
  const auto participants =
      select_participants(ids, config_.participation, config_.seed, 0);
  log_.record(0, "async_start", "", 0, {{"participants", participants.size()}});
  for (const auto& id : participants) dispatch_async(id);
}

void FederationEngine::dispatch_async(const std::string& learner_id) {
  const std::string task_id =
      "a" + std::to_string(++async_task_counter_) + "-" + learner_id;
  async_outstanding_[learner_id] = task_id;
  effects_.dispatch_train(0, {TaskAssignment{task_id, registry_.at(learner_id)}},
                          global_, config_.hyperparams);
}

void FederationEngine::handle_async_completion(const wire::MarkTaskCompleted& msg,
                                               double t) {
  auto it = async_outstanding_.find(msg.learner_id);
  if (finished() || it == async_outstanding_.end() || it->second != msg.task_id) {
    log_.record(LogEvent{t, round_number_, "stale_completion", msg.learner_id, 0,
                         {{"task_id", msg.task_id}}});
    return;
  }
  async_outstanding_.erase(it);
  bool valid = true;
  try {
    validate_model(msg.model);
  } catch (const Error&) {
    valid = false;
  }
  if (!valid || !shapes_match(msg.model)) {
    log_.record(LogEvent{t, round_number_, "completion_rejected", msg.learner_id, 0,
                         {{"task_id", msg.task_id}}});
    dispatch_async(msg.learner_id);
    return;
  }
  uint64_t samples = msg.stats.num_training_samples;
  if (samples == 0) samples = std::max<uint64_t>(1, registry_[msg.learner_id].num_samples);
  store_.insert(msg.learner_id, msg.model, samples);
  ++completions_[msg.learner_id];

  const uint64_t update = round_number_ + 1;
  log_.record(LogEvent{t, update, std::string(ev::kTaskCompleted), msg.learner_id, 0,
                       {{"task_id", msg.task_id}}});
  phase_ = wire::Phase::kAggregating;
  const auto ids = store_.ids();
  const double t0 = log_.now();
  log_.record(LogEvent{t0, update, std::string(ev::kAggregationBegin), "", 0,
                       {{"models", ids.size()}}});
  const auto stored = store_.select(ids);
  const AggregationPlan plan = make_plan(ids, stored, config_.aggregation_workers);
  std::vector<WeightedModel> inputs;
  for (size_t i = 0; i < stored.size(); ++i) {
    inputs.push_back(WeightedModel{stored[i].model.get(), plan.weights[i]});
  }
  ModelState result = fedavg(inputs, plan.worker_count);
  result.version = global_->version + 1;
  const double t1 = log_.now();
  round_number_ = update;
  log_.record(LogEvent{t1, update, std::string(ev::kAggregationEnd), "", (t1 - t0) * 1e3,
                       {{"models", ids.size()},
                        {"model_version", result.version},
                        {"model_digest", model_digest(result)}}});
  log_.record(LogEvent{t1, update, "community_update", msg.learner_id, 0,
                       {{"model_version", result.version}}});
  global_ = std::make_shared<const ModelState>(std::move(result));
  phase_ = wire::Phase::kTraining;
  if (check_termination(round_number_, log_.now() - start_time_, config_)) {
    finish("termination criterion met");
  } else {
    dispatch_async(msg.learner_id);
  }
}

wire::StatusReply FederationEngine::status() const {
  return wire::StatusReply{round_number_, global_ ? global_->version : 0,
                           static_cast<uint32_t>(registry_.size()), phase_};
}

// ---------------------------------------------------------------------------
// ControllerService

class ControllerService::Effects : public ControllerEffects {
 public:
  explicit Effects(ControllerService& s) : s_(s) {}

  void dispatch_train(uint64_t round, const std::vector<TaskAssignment>& tasks,
                      std::shared_ptr<const ModelState> model,
                      const wire::Hyperparams& hp) override {
    const auto bytes = wire::encode_model_bytes(*model);
    for (const auto& task : tasks) {
      s_.spawn([this, round, task, bytes, hp] {
        bool ok = false;
        std::string error;
        std::shared_ptr<net::Connection> conn;
        try {
          conn = s_.network_.connect(task.learner.endpoint, 10);
          s_.track(conn);
          net::Channel ch(conn);
          ch.send(wire::encode_run_task(task.task_id, bytes, hp));
          const auto reply = ch.expect(s_.options_.config.ack_timeout_s);
          const auto* ack = std::get_if<wire::Ack>(&reply);
          ok = ack != nullptr && ack->status && ack->task_id == task.task_id;
          if (!ok) error = "learner refused the task";
        } catch (const std::exception& e) {
          error = e.what();
        }
        if (conn) {
          conn->close();
          s_.untrack(conn);
        }
        const double t = s_.log_.now();
        s_.post([this, round, task_id = task.task_id, ok, t, error] {
          s_.engine_->on_train_ack(round, task_id, ok, t, error);
        });
      });
    }
  }

  void dispatch_eval(uint64_t round, const std::vector<TaskAssignment>& tasks,
                     std::shared_ptr<const ModelState> model) override {
    const auto bytes = wire::encode_model_bytes(*model);
    for (const auto& task : tasks) {
      s_.spawn([this, round, task, bytes] {
        const std::string& id = task.learner.id;
        std::optional<double> loss;
        std::string error;
        std::shared_ptr<net::Connection> conn;
        try {
          conn = s_.network_.connect(task.learner.endpoint, 10);
          s_.track(conn);
          net::Channel ch(conn);
          ch.send(wire::encode_evaluate_model(task.task_id, bytes));
          const double sent = s_.log_.now();
          s_.post([this, round, id, sent] { s_.engine_->on_eval_sent(round, id, sent); });
          const auto reply = ch.expect(s_.options_.config.eval_timeout_s);
          if (const auto* r = std::get_if<wire::EvalReply>(&reply)) {
            loss = r->loss;
          } else {
            error = "learner could not evaluate the model";
          }
        } catch (const std::exception& e) {
          error = e.what();
        }
        if (conn) {
          conn->close();
          s_.untrack(conn);
        }
        const double t = s_.log_.now();
        s_.post([this, round, id, loss, t, error] {
          s_.engine_->on_eval_result(round, id, loss, t, error);
        });
      });
    }
  }

  void arm_train_deadline(uint64_t round, double seconds) override {
    {
      std::lock_guard lock(s_.timer_mu_);
      s_.deadlines_.emplace(
          net::Clock::now() + std::chrono::duration_cast<net::Clock::duration>(
                                  std::chrono::duration<double>(seconds)),
          round);
    }
    s_.timer_cv_.notify_all();
  }

  void federation_finished() override {}

 private:
  ControllerService& s_;
};

ControllerService::ControllerService(net::Network& network, ControllerOptions options)
    : network_(network),
      options_(std::move(options)),
      log_(options_.event_log_path),
      effects_(std::make_unique<Effects>(*this)),
      engine_(std::make_unique<FederationEngine>(options_.config, *effects_, log_)) {
  queue_thread_ = std::thread([this] { queue_loop(); });
  timer_thread_ = std::thread([this] { timer_loop(); });
  try {
    server_ = std::make_unique<net::Server>(
        network_, options_.listen, [this](net::Channel& ch) { handle(ch); });
  } catch (...) {
    stop();
    throw;
  }
  log_.record(0, "controller_listening", "", 0, {{"endpoint", server_->endpoint()}});
}

ControllerService::~ControllerService() { stop(); }

const std::string& ControllerService::endpoint() const { return server_->endpoint(); }

void ControllerService::post(std::function<void()> fn) {
  {
    std::lock_guard lock(queue_mu_);
    if (queue_stopping_) return;
    queue_.push_back(std::move(fn));
  }
  queue_cv_.notify_one();
}

void ControllerService::queue_loop() {
  while (true) {
    std::function<void()> fn;
    {
      std::unique_lock lock(queue_mu_);
      queue_cv_.wait(lock, [&] { return queue_stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      fn = std::move(queue_.front());
      queue_.pop_front();
    }
    try {
      fn();
    } catch (const std::exception& e) {
      log_.record(engine_->round_number(), "controller_error", "", 0,
                  {{"error", e.what()}});
    }
  }
}

void ControllerService::timer_loop() {
  std::unique_lock lock(timer_mu_);
  while (!timer_stopping_) {
    timer_cv_.wait_for(lock, std::chrono::milliseconds(100));
    const auto now = net::Clock::now();
    while (!deadlines_.empty() && deadlines_.begin()->first <= now) {
      const uint64_t round = deadlines_.begin()->second;
      deadlines_.erase(deadlines_.begin());
      post([this, round] { engine_->on_train_deadline(round); });
    }
    post([this] { engine_->on_tick(); });
  }
}

void ControllerService::spawn(std::function<void()> fn) {
  std::lock_guard lock(workers_mu_);
  if (workers_stopping_) return;
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (*it->done) {
      it->thread.join();
      it = workers_.erase(it);
    } else {
      ++it;
    }
  }
  auto done = std::make_shared<std::atomic<bool>>(false);
  workers_.push_back(Worker{std::thread([fn = std::move(fn), done] {
                              fn();
                              *done = true;
                            }),
                            done});
}

void ControllerService::track(const std::shared_ptr<net::Connection>& c) {
  std::lock_guard lock(workers_mu_);
  if (workers_stopping_) {
    c->close();
    return;
  }
  live_.insert(c);
}

void ControllerService::untrack(const std::shared_ptr<net::Connection>& c) {
  std::lock_guard lock(workers_mu_);
  live_.erase(c);
}

void ControllerService::handle(net::Channel& ch) {
  try {
    while (auto m = ch.receive()) {
      if (auto* join = std::get_if<wire::JoinFederation>(&*m)) {
        if (join->public_cert) {
          try {
            network_.trust_certificate(*join->public_cert);
          } catch (const Error&) {
            // on_join rejects the descriptor.
          }
        }
        auto promise = std::make_shared<std::promise<wire::JoinAck>>();
        auto future = promise->get_future();
        post([this, promise, msg = *join] { promise->set_value(engine_->on_join(msg)); });
        if (future.wait_for(std::chrono::seconds(60)) != std::future_status::ready) return;
        ch.send(future.get());
      } else if (auto* done = std::get_if<wire::MarkTaskCompleted>(&*m)) {
        const double t = log_.now();
        auto msg = std::make_shared<wire::MarkTaskCompleted>(std::move(*done));
        ch.send(wire::Ack{msg->task_id, true});
        post([this, msg, t] { engine_->on_task_completed(*msg, t); });
      } else if (auto* init = std::get_if<wire::InitModel>(&*m)) {
        auto model = std::make_shared<ModelState>(std::move(init->model));
        post([this, model] { engine_->on_initial_model(std::move(*model)); });
        ch.send(wire::Ack{init->task_id, true});
      } else if (std::holds_alternative<wire::Ping>(*m)) {
        ch.send(wire::Pong{});
      } else if (std::holds_alternative<wire::StatusRequest>(*m)) {
        auto promise = std::make_shared<std::promise<wire::StatusReply>>();
        auto future = promise->get_future();
        post([this, promise] { promise->set_value(engine_->status()); });
        if (future.wait_for(std::chrono::seconds(60)) != std::future_status::ready) return;
        ch.send(future.get());
      } else if (std::holds_alternative<wire::ShutDown>(*m)) {
        {
          std::lock_guard lock(shutdown_mu_);
          shutdown_requested_ = true;
        }
        shutdown_cv_.notify_all();
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

void ControllerService::wait_for_shutdown() {
  std::unique_lock lock(shutdown_mu_);
  shutdown_cv_.wait(lock, [&] { return shutdown_requested_ || stopped_; });
}

bool ControllerService::shutdown_requested() const {
  std::lock_guard lock(shutdown_mu_);
  return shutdown_requested_;
}

void ControllerService::inspect(const std::function<void(const FederationEngine&)>& fn) {
  std::promise<void> done;
  auto future = done.get_future();
  bool queued = false;
  {
    std::lock_guard lock(queue_mu_);
    if (!queue_stopping_) {
      queue_.push_back([&] {
        fn(*engine_);
        done.set_value();
      });
      queued = true;
    }
  }
  if (!queued) {
    fn(*engine_);
    return;
  }
  queue_cv_.notify_one();
  future.wait();
}

void ControllerService::stop() {
  {
    std::lock_guard lock(shutdown_mu_);
    if (stopped_) return;
    stopped_ = true;
  }
  shutdown_cv_.notify_all();
  if (server_) server_->stop();
  std::list<Worker> workers;
  {
    std::lock_guard lock(workers_mu_);
    workers_stopping_ = true;
    for (const auto& c : live_) c->close();
    workers.swap(workers_);
  }
  for (auto& w : workers) w.thread.join();
  {
    std::lock_guard lock(timer_mu_);
    timer_stopping_ = true;
  }
  timer_cv_.notify_all();
  if (timer_thread_.joinable()) timer_thread_.join();
  {
    std::lock_guard lock(queue_mu_);
    queue_stopping_ = true;
    queue_.clear();
  }
  queue_cv_.notify_all();
  if (queue_thread_.joinable()) queue_thread_.join();
}

}  // namespace fedlite

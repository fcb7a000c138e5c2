#include "fedlite/controller.h"

#include <cmath>
#include <future>
#include <random>

#include <gtest/gtest.h>

#include "fedlite/errors.h"
#include "fedlite/model_engine.h"

namespace fedlite {
namespace {

using wire::Phase;

struct Dispatch {
  uint64_t round;
  std::vector<TaskAssignment> tasks;
  std::shared_ptr<const ModelState> model;
};

class FakeEffects : public ControllerEffects {
 public:
  void dispatch_train(uint64_t round, const std::vector<TaskAssignment>& tasks,
                      std::shared_ptr<const ModelState> model,
                      const wire::Hyperparams&) override {
    train.push_back({round, tasks, std::move(model)});
  }
  void dispatch_eval(uint64_t round, const std::vector<TaskAssignment>& tasks,
                     std::shared_ptr<const ModelState> model) override {
    eval.push_back({round, tasks, std::move(model)});
  }
  void arm_train_deadline(uint64_t round, double seconds) override {
    deadlines.emplace_back(round, seconds);
  }
  void federation_finished() override { ++finished; }

  std::vector<Dispatch> train;
  std::vector<Dispatch> eval;
  std::vector<std::pair<uint64_t, double>> deadlines;
  int finished = 0;
};

const MlpArchitecture kTiny{2, 1, 3, 1};

std::string id(int i) { return "L" + std::to_string(i); }

// A learner's "trained" model: the global model with every value shifted.
ModelState trained(const ModelState& global, float shift) {
  auto tensors = decode_model(global);
  for (auto& t : tensors) {
    for (auto& v : t.values) v += shift;
  }
  return encode_model(tensors, global.version);
}

wire::MarkTaskCompleted completion(const TaskAssignment& task, const ModelState& global,
                                   float shift, uint64_t samples = 100) {
  wire::MarkTaskCompleted m;
  m.task_id = task.task_id;
  m.learner_id = task.learner.id;
  m.model = trained(global, shift);
  m.stats = TrainStats{1.0, 1, 1, samples};
  return m;
}

class EngineTest : public ::testing::Test {
 protected:
  FederationConfig config(uint64_t rounds) {
    FederationConfig c;
    c.max_rounds = rounds;
    c.expected_learners = 1;
    return c;
  }

  void make(FederationConfig c, int learners) {
    c.expected_learners = std::max<uint32_t>(c.expected_learners, learners);
    engine_ = std::make_unique<FederationEngine>(c, fx_, log_);
    for (int i = 0; i < learners; ++i) {
      EXPECT_TRUE(engine_->on_join({id(i), "ep-" + id(i), 100, std::nullopt}).accepted);
    }
    engine_->on_initial_model(build_mlp(kTiny, 1));
  }

  void ack_all(const Dispatch& d) {
    for (const auto& t : d.tasks) engine_->on_train_ack(d.round, t.task_id, true, log_.now());
  }

  void complete_all(const Dispatch& d, float shift = 0.5f) {
    for (const auto& t : d.tasks) {
      engine_->on_task_completed(completion(t, *d.model, shift), log_.now());
    }
  }

  void eval_all(const Dispatch& d, double loss = 1.0) {
    for (const auto& t : d.tasks) {
      engine_->on_eval_sent(d.round, t.learner.id, log_.now());
    }
    for (const auto& t : d.tasks) {
      engine_->on_eval_result(d.round, t.learner.id, loss, log_.now());
    }
  }

  void run_round(float shift = 0.5f) {
    const Dispatch d = fx_.train.back();
    ack_all(d);
    complete_all(d, shift);
    eval_all(fx_.eval.back());
  }

  FakeEffects fx_;
  EventLog log_;
  std::unique_ptr<FederationEngine> engine_;
};

TEST(Termination, Examples) {
  FederationConfig c;
  c.max_rounds = 5;
  EXPECT_TRUE(check_termination(5, 0, c));
  EXPECT_FALSE(check_termination(3, 1e9, c));
  FederationConfig w;
  w.max_wall_clock_s = 0.0;
  EXPECT_TRUE(check_termination(0, 0, w));
  w.max_wall_clock_s = 10;
  EXPECT_FALSE(check_termination(100, 9.99, w));
  EXPECT_TRUE(check_termination(0, 10, w));
}

TEST(Termination, ConfigNeedsACriterion) {
  FederationConfig c;
  EXPECT_THROW(c.validate(), ConfigError);
  c.max_rounds = 1;
  EXPECT_NO_THROW(c.validate());
  c.participation = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Selection, SeededAndOrdered) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(id(i));
  std::sort(ids.begin(), ids.end());
  const auto a = select_participants(ids, 0.5, 42, 3);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(a, select_participants(ids, 0.5, 42, 3));
  EXPECT_EQ(std::set<std::string>(a.begin(), a.end()).size(), 5u);
  EXPECT_EQ(select_participants(ids, 1.0, 42, 3), ids);
  EXPECT_EQ(select_participants(ids, 0.01, 42, 3).size(), 1u);
  EXPECT_EQ(select_participants(ids, 0.3, 42, 3).size(), 3u);
  // Different rounds draw different subsets at least some of the time.
  std::set<std::vector<std::string>> seen;
  for (uint64_t r = 1; r <= 20; ++r) seen.insert(select_participants(ids, 0.5, 42, r));
  EXPECT_GT(seen.size(), 1u);
}

// Every learner is picked with the same frequency (within sampling noise).
TEST(Selection, RoughlyUniform) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(id(i));
  std::sort(ids.begin(), ids.end());
  std::map<std::string, int> counts;
  const int trials = 4000;
  for (int r = 0; r < trials; ++r) {
    for (const auto& s : select_participants(ids, 0.3, 7, r)) ++counts[s];
  }
  for (const auto& i : ids) {
    EXPECT_NEAR(counts[i], trials * 0.3, trials * 0.3 * 0.1) << i;
  }
}

TEST_F(EngineTest, Registration) {
  engine_ = std::make_unique<FederationEngine>(config(1), fx_, log_);
  EXPECT_TRUE(engine_->on_join({"L1", "a:1", 100, std::nullopt}).accepted);
  EXPECT_TRUE(engine_->on_join({"L1", "b:2", 100, std::nullopt}).accepted);
  ASSERT_EQ(engine_->registry().size(), 1u);
  EXPECT_EQ(engine_->registry().at("L1").endpoint, "b:2");
  for (int i = 0; i < 200; ++i) engine_->on_join({id(1000 + i), "e", 100, std::nullopt});
  EXPECT_EQ(engine_->registry().size(), 201u);
  EXPECT_FALSE(engine_->on_join({"", "e", 1, std::nullopt}).accepted);
  EXPECT_FALSE(engine_->on_join({"x", "", 1, std::nullopt}).accepted);
  EXPECT_FALSE(engine_->on_join({"x", "e", 1, std::string("garbage")}).accepted);
  EXPECT_EQ(engine_->registry().size(), 201u);
}

TEST_F(EngineTest, WaitsForLearnersAndModel) {
  auto c = config(1);
  c.expected_learners = 2;
  engine_ = std::make_unique<FederationEngine>(c, fx_, log_);
  engine_->on_join({"a", "a", 1, std::nullopt});
  engine_->on_initial_model(build_mlp(kTiny, 1));
  EXPECT_EQ(engine_->phase(), Phase::kWaiting);
  engine_->on_join({"b", "b", 1, std::nullopt});
  EXPECT_EQ(engine_->phase(), Phase::kTraining);
  ASSERT_EQ(fx_.train.size(), 1u);
  EXPECT_EQ(fx_.train[0].tasks.size(), 2u);
  EXPECT_EQ(fx_.deadlines.at(0), (std::pair<uint64_t, double>{1, 600}));
}

TEST_F(EngineTest, AggregatesOnceAfterLastCompletion) {
  make(config(1), 3);
  const Dispatch d = fx_.train.at(0);
  ack_all(d);
  // Out of dispatch order.
  for (int i : {2, 0}) {
    engine_->on_task_completed(completion(d.tasks[i], *d.model, 0.5f), log_.now());
    EXPECT_EQ(engine_->phase(), Phase::kTraining);
    EXPECT_TRUE(fx_.eval.empty());
  }
  engine_->on_task_completed(completion(d.tasks[1], *d.model, 0.5f), log_.now());
  EXPECT_EQ(engine_->phase(), Phase::kEvaluating);
  ASSERT_EQ(fx_.eval.size(), 1u);
  EXPECT_EQ(engine_->global_model()->version, 1u);
  int aggregations = 0;
  for (const auto& e : log_.events()) aggregations += e.event == ev::kAggregationEnd;
  EXPECT_EQ(aggregations, 1);
  // A duplicate completion changes nothing.
  engine_->on_task_completed(completion(d.tasks[1], *d.model, 9.f), log_.now());
  EXPECT_EQ(engine_->global_model()->version, 1u);
}

TEST_F(EngineTest, GlobalModelIsSampleWeightedMean) {
  make(config(1), 3);
  const Dispatch d = fx_.train.at(0);
  ack_all(d);
  const float shifts[] = {1.f, 2.f, 4.f};
  const uint64_t samples[] = {100, 100, 200};
  for (int i = 0; i < 3; ++i) {
    engine_->on_task_completed(completion(d.tasks[i], *d.model, shifts[i], samples[i]),
                               log_.now());
  }
  // Mean shift (1 + 2 + 2 * 4) / 4 = 2.75 on every element.
  const auto before = decode_model(*d.model);
  const auto after = decode_model(*engine_->global_model());
  for (size_t t = 0; t < before.size(); ++t) {
    for (size_t k = 0; k < before[t].values.size(); ++k) {
      const double expected = 0.25 * (double(before[t].values[k] + 1.f) +
                                      double(before[t].values[k] + 2.f)) +
                              0.5 * double(before[t].values[k] + 4.f);
      EXPECT_NEAR(after[t].values[k], expected, 1e-6);
    }
  }
}

TEST_F(EngineTest, FullRunVersionEqualsCompletedRounds) {
  make(config(4), 3);
  for (int r = 1; r <= 4; ++r) {
    EXPECT_EQ(engine_->round_number(), static_cast<uint64_t>(r));
    run_round();
    EXPECT_EQ(engine_->global_model()->version, static_cast<uint64_t>(r));
  }
  EXPECT_TRUE(engine_->finished());
  EXPECT_EQ(fx_.finished, 1);
  EXPECT_EQ(engine_->completed_rounds(), 4u);
  EXPECT_EQ(fx_.train.size(), 4u);
  // Each round ships the previous aggregate.
  for (size_t r = 0; r < fx_.train.size(); ++r) EXPECT_EQ(fx_.train[r].model->version, r);
  for (const auto& rec : engine_->history()) {
    EXPECT_EQ(rec.losses.size(), 3u);
    ASSERT_TRUE(rec.metrics.has_value());
  }
}

TEST_F(EngineTest, OnlineMetricsMatchLog) {
  make(config(3), 4);
  for (int r = 0; r < 3; ++r) run_round();
  const auto events = log_.events();
  for (const auto& rec : engine_->history()) {
    const RoundMetrics from_log = compute_round_metrics(events, rec.round);
    const RoundMetrics& online = *rec.metrics;
    for (auto name : kMetricNames) {
      EXPECT_NEAR(metric_value(from_log, name), metric_value(online, name), 1e-3) << name;
    }
    EXPECT_TRUE(timeline_monotone(round_timeline(events, rec.round)));
  }
}

TEST_F(EngineTest, DispatchFailureDropsLearnerForTheRound) {
  make(config(1), 10);
  const Dispatch d = fx_.train.at(0);
  engine_->on_train_ack(1, d.tasks[4].task_id, false, log_.now(), "refused");
  EXPECT_EQ(engine_->pending_train().size(), 9u);
  for (size_t i = 0; i < d.tasks.size(); ++i) {
    if (i == 4) continue;
    engine_->on_train_ack(1, d.tasks[i].task_id, true, log_.now());
    engine_->on_task_completed(completion(d.tasks[i], *d.model, 1.f), log_.now());
  }
  EXPECT_EQ(engine_->phase(), Phase::kEvaluating);
  EXPECT_EQ(engine_->history()[0].aggregated.size(), 9u);
  EXPECT_EQ(fx_.eval.at(0).tasks.size(), 9u);
}

TEST_F(EngineTest, AllDispatchesFailingAbortsTheRound) {
  make(config(2), 2);
  const Dispatch d = fx_.train.at(0);
  for (const auto& t : d.tasks) engine_->on_train_ack(1, t.task_id, false, log_.now());
  EXPECT_TRUE(engine_->history()[0].aborted);
  EXPECT_EQ(engine_->round_number(), 2u);
  EXPECT_EQ(engine_->global_model()->version, 0u);
  // A completion belonging to the aborted round is stale.
  engine_->on_task_completed(completion(d.tasks[0], *d.model, 1.f), log_.now());
  EXPECT_EQ(engine_->global_model()->version, 0u);
  EXPECT_EQ(engine_->round_number(), 2u);
}

TEST_F(EngineTest, DeadlineAggregatesReceivedModels) {
  make(config(2), 4);
  const Dispatch d = fx_.train.at(0);
  ack_all(d);
  for (int i = 0; i < 3; ++i) {
    engine_->on_task_completed(completion(d.tasks[i], *d.model, 1.f), log_.now());
  }
  engine_->on_train_deadline(7);  // wrong round: ignored
  EXPECT_EQ(engine_->phase(), Phase::kTraining);
  engine_->on_train_deadline(1);
  EXPECT_EQ(engine_->phase(), Phase::kEvaluating);
  const auto& rec = engine_->history()[0];
  EXPECT_EQ(rec.aggregated.size(), 3u);
  EXPECT_EQ(rec.stragglers, std::set<std::string>{d.tasks[3].learner.id});
  // The straggler's late model is stale.
  engine_->on_task_completed(completion(d.tasks[3], *d.model, 1.f), log_.now());
  EXPECT_EQ(engine_->global_model()->version, 1u);
  EXPECT_EQ(engine_->history()[0].aggregated.size(), 3u);
}

TEST_F(EngineTest, DeadlineWithNothingReceivedAborts) {
  make(config(3), 2);
  ack_all(fx_.train.at(0));
  engine_->on_train_deadline(1);
  EXPECT_TRUE(engine_->history()[0].aborted);
  EXPECT_EQ(engine_->round_number(), 2u);
  run_round();
  EXPECT_EQ(engine_->global_model()->version, 1u);
}

TEST_F(EngineTest, EvalFailureIsRecordedAndRoundCompletes) {
  make(config(1), 10);
  const Dispatch d = fx_.train.at(0);
  ack_all(d);
  complete_all(d);
  const Dispatch e = fx_.eval.at(0);
  for (size_t i = 0; i < e.tasks.size(); ++i) {
    const auto& learner = e.tasks[i].learner.id;
    engine_->on_eval_sent(1, learner, log_.now());
    if (i == 6) {
      engine_->on_eval_result(1, learner, std::nullopt, log_.now(), "timed out");
    } else {
      engine_->on_eval_result(1, learner, 0.25, log_.now());
    }
  }
  const auto& rec = engine_->history()[0];
  EXPECT_EQ(rec.losses.size(), 9u);
  EXPECT_EQ(rec.eval_failures.size(), 1u);
  EXPECT_TRUE(engine_->finished());
}

TEST_F(EngineTest, CompletionBeforeAckCountsAsAck) {
  make(config(1), 2);
  const Dispatch d = fx_.train.at(0);
  engine_->on_task_completed(completion(d.tasks[0], *d.model, 1.f), log_.now());
  engine_->on_train_ack(1, d.tasks[1].task_id, true, log_.now());
  engine_->on_task_completed(completion(d.tasks[1], *d.model, 1.f), log_.now());
  EXPECT_EQ(engine_->phase(), Phase::kEvaluating);
  engine_->on_train_ack(1, d.tasks[0].task_id, true, log_.now() + 5);  // late, ignored
  eval_all(fx_.eval.at(0));
  const auto events = log_.events();
  EXPECT_TRUE(timeline_monotone(round_timeline(events, 1)));
}

TEST_F(EngineTest, MismatchedModelIsRejected) {
  make(config(1), 2);
  const Dispatch d = fx_.train.at(0);
  ack_all(d);
  auto bad = completion(d.tasks[0], *d.model, 1.f);
  bad.model = build_mlp(MlpArchitecture{2, 1, 4, 1}, 3);
  engine_->on_task_completed(bad, log_.now());
  engine_->on_task_completed(completion(d.tasks[1], *d.model, 1.f), log_.now());
  EXPECT_EQ(engine_->phase(), Phase::kEvaluating);
  EXPECT_EQ(engine_->history()[0].aggregated, std::vector<std::string>{d.tasks[1].learner.id});
}

TEST_F(EngineTest, ZeroWallClockFinishesImmediately) {
  FederationConfig c;
  c.max_wall_clock_s = 0.0;
  make(c, 2);
  EXPECT_TRUE(engine_->finished());
  EXPECT_TRUE(fx_.train.empty());
}

TEST_F(EngineTest, PartialParticipationDispatchesSubset) {
  auto c = config(1);
  c.participation = 0.5;
  c.seed = 11;
  make(c, 10);
  ASSERT_EQ(fx_.train.at(0).tasks.size(), 5u);
  std::vector<std::string> ids;
  for (const auto& t : fx_.train[0].tasks) ids.push_back(t.learner.id);
  std::vector<std::string> all;
  for (int i = 0; i < 10; ++i) all.push_back(id(i));
  std::sort(all.begin(), all.end());
  EXPECT_EQ(ids, select_participants(all, 0.5, 11, 1));
}

TEST_F(EngineTest, AsyncVersionCountsCompletions) {
  FederationConfig c;
  c.mode = FederationMode::kAsynchronous;
  c.max_rounds = 1000;
  make(c, 2);
  ASSERT_EQ(fx_.train.size(), 2u);
  // Fast learner L0 reports 8 times while L1 reports once; each report is
  // answered with a new task for the reporter only.
  auto latest = [&](const std::string& learner) {
    for (auto it = fx_.train.rbegin(); it != fx_.train.rend(); ++it) {
      if (it->tasks[0].learner.id == learner) return *it;
    }
    throw std::logic_error("no dispatch");
  };
  uint64_t total = 0;
  for (int k = 0; k < 8; ++k) {
    const Dispatch d = latest("L0");
    engine_->on_train_ack(0, d.tasks[0].task_id, true, log_.now());
    engine_->on_task_completed(completion(d.tasks[0], *d.model, 0.1f), log_.now());
    ++total;
    EXPECT_EQ(engine_->global_model()->version, total);
  }
  const Dispatch slow = latest("L1");
  EXPECT_EQ(slow.model->version, 0u);
  engine_->on_task_completed(completion(slow.tasks[0], *slow.model, 0.1f), log_.now());
  ++total;
  EXPECT_EQ(engine_->global_model()->version, total);
  EXPECT_EQ(engine_->completions().at("L0"), 8u);
  EXPECT_EQ(engine_->completions().at("L1"), 1u);
  EXPECT_EQ(fx_.train.size(), 2u + total);
  // Replaying an old task id is stale.
  engine_->on_task_completed(completion(slow.tasks[0], *slow.model, 0.1f), log_.now());
  EXPECT_EQ(engine_->global_model()->version, total);
  EXPECT_TRUE(fx_.eval.empty());
}

TEST_F(EngineTest, AsyncStopsAtMaxUpdates) {
  FederationConfig c;
  c.mode = FederationMode::kAsynchronous;
  c.max_rounds = 3;
  make(c, 1);
  for (int k = 0; k < 3; ++k) {
    const Dispatch d = fx_.train.back();
    engine_->on_task_completed(completion(d.tasks[0], *d.model, 0.1f), log_.now());
  }
  EXPECT_TRUE(engine_->finished());
  EXPECT_EQ(fx_.train.size(), 3u);
  EXPECT_EQ(engine_->global_model()->version, 3u);
}

// --- Runtime over the in-memory network ------------------------------------

// A scripted learner: acks RunTask, reports a completion, answers evals
// after `eval_delay_s`.
class ScriptedLearner {
 public:
  ScriptedLearner(net::InMemoryNetwork& network, std::string id, std::string controller,
                  double eval_delay_s = 0)
      : network_(network), id_(std::move(id)), controller_(std::move(controller)),
        eval_delay_s_(eval_delay_s),
        server_(network, "ep-" + id_, [this](net::Channel& ch) { serve(ch); }) {}

  void join() {
    const auto reply = net::call(network_, controller_,
                                 wire::JoinFederation{id_, "ep-" + id_, 100, std::nullopt}, 5);
    ASSERT_TRUE(std::get<wire::JoinAck>(reply).accepted);
  }
  std::string endpoint() const { return "ep-" + id_; }

 private:
  void serve(net::Channel& ch) {
    auto m = ch.receive();
    if (!m) return;
    if (auto* run = std::get_if<wire::RunTask>(&*m)) {
      ch.send(wire::Ack{run->task_id, true});
      wire::MarkTaskCompleted done;
      done.task_id = run->task_id;
      done.learner_id = id_;
      done.model = trained(run->model, 0.25f);
      done.stats = TrainStats{1, 1, 1, 100};
      net::call(network_, controller_, done, 5);
    } else if (auto* eval = std::get_if<wire::EvaluateModel>(&*m)) {
      std::this_thread::sleep_for(std::chrono::duration<double>(eval_delay_s_));
      ch.send(wire::EvalReply{eval->task_id, 0.5});
    }
  }

  net::InMemoryNetwork& network_;
  std::string id_;
  std::string controller_;
  double eval_delay_s_;
  net::Server server_;
};

wire::StatusReply status(net::Network& network, const std::string& endpoint) {
  return std::get<wire::StatusReply>(net::call(network, endpoint, wire::StatusRequest{}, 5));
}

void wait_done(net::Network& network, const std::string& endpoint) {
  const auto give_up = std::chrono::steady_clock::now() + std::chrono::seconds(30);
  while (status(network, endpoint).phase != Phase::kDone) {
    ASSERT_LT(std::chrono::steady_clock::now(), give_up);
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
}

TEST(ControllerService, RoundsOverInMemoryNetwork) {
  net::InMemoryNetwork network;
  ControllerOptions options;
  options.listen = "controller";
  options.config.max_rounds = 3;
  options.config.expected_learners = 4;
  ControllerService service(network, options);
  std::vector<std::unique_ptr<ScriptedLearner>> learners;
  for (int i = 0; i < 4; ++i) {
    learners.push_back(std::make_unique<ScriptedLearner>(network, id(i), "controller"));
    learners.back()->join();
  }
  EXPECT_EQ(std::get<wire::Ack>(net::call(network, "controller",
                                          wire::InitModel{"init", build_mlp(kTiny, 3),
                                                          std::nullopt},
                                          5))
                .status,
            true);
  wait_done(network, "controller");
  const auto s = status(network, "controller");
  EXPECT_EQ(s.global_version, 3u);
  EXPECT_EQ(s.registered, 4u);
  service.inspect([](const FederationEngine& e) {
    for (const auto& rec : e.history()) EXPECT_EQ(rec.losses.size(), 4u);
  });
  const auto events = service.events();
  for (const auto& m : compute_all_rounds(events)) {
    EXPECT_TRUE(timeline_monotone(round_timeline(events, m.round)));
  }
  EXPECT_EQ(net::call(network, "controller", wire::Ping{}, 5), wire::Message(wire::Pong{}));
  net::notify(network, "controller", wire::ShutDown{}, 5);
  service.wait_for_shutdown();
  service.stop();
}

TEST(ControllerService, UnreachableLearnerAndSlowEval) {
  net::InMemoryNetwork network;
  ControllerOptions options;
  options.listen = "controller";
  options.config.max_rounds = 1;
  options.config.expected_learners = 10;
  options.config.eval_timeout_s = 0.3;
  ControllerService service(network, options);
  std::vector<std::unique_ptr<ScriptedLearner>> learners;
  for (int i = 0; i < 10; ++i) {
    learners.push_back(std::make_unique<ScriptedLearner>(network, id(i), "controller",
                                                         i == 7 ? 2.0 : 0.0));
    learners.back()->join();
  }
  network.set_unreachable(learners[3]->endpoint(), true);
  net::call(network, "controller", wire::InitModel{"init", build_mlp(kTiny, 3), std::nullopt},
            5);
  wait_done(network, "controller");
  service.inspect([&](const FederationEngine& e) {
    ASSERT_EQ(e.history().size(), 1u);
    const auto& rec = e.history()[0];
    EXPECT_EQ(rec.unavailable, std::set<std::string>{id(3)});
    EXPECT_EQ(rec.aggregated.size(), 9u);
    EXPECT_EQ(rec.losses.size(), 8u);
    EXPECT_EQ(rec.eval_failures.size(), 1u);
    EXPECT_TRUE(rec.eval_failures.contains(id(7)));
  });
  service.stop();
}

TEST(ControllerService, MalformedFrameGetsErrorReply) {
  net::InMemoryNetwork network;
  ControllerOptions options;
  options.listen = "controller";
  options.config.max_rounds = 1;
  ControllerService service(network, options);
  auto conn = network.connect("controller", 1);
  const std::vector<uint8_t> junk{0, 0, 0, 1, 0x7E, 0};
  conn->write_all(junk);
  net::Channel ch(std::shared_ptr<net::Connection>(std::move(conn)));
  EXPECT_EQ(ch.expect(5), wire::Message(wire::Ack{"", false}));
  EXPECT_FALSE(ch.receive(5).has_value());
}

}  // namespace
}  // namespace fedlite

// End-to-end acceptance checks. Prints one PASS / FAIL / N/A line per
// criterion and exits nonzero when any criterion fails.
//
// Usage: acceptance [output dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "fedlite/aggregator.h"
#include "fedlite/bench.h"
#include "fedlite/dense_network.h"
#include "fedlite/driver.h"
#include "fedlite/model_engine.h"
#include "fedlite/tensor_codec.h"
#include "gradient_check.h"
#include "test_util.h"
#include "ulp.h"

namespace fedlite {
namespace {
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Outcome {
  enum Status { kPass, kFail, kNotApplicable } status = kFail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::kPass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::kFail, std::move(d)}; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int precision = 3) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

fs::path g_out;

FederationEnvironment base_env(const std::string& name, uint32_t learners) {
  FederationEnvironment env;
  env.learners = learners;
  env.model_size = "100k";
  env.spawn = SpawnMode::kSubprocess;
  env.bin_dir = FEDLITE_BIN_DIR;
  env.run_dir = (g_out / name).string();
  env.run_id = name;
  env.config.seed = 11;
  fs::remove_all(env.run_dir);
  return env;
}

std::map<uint64_t, size_t> count_per_round(const std::vector<LogEvent>& log,
                                           std::string_view event) {
  std::map<uint64_t, size_t> out;
  for (const auto& e : log) {
    if (e.event == event) ++out[e.round];
  }
  return out;
}

// Physical cores from /proc/cpuinfo (distinct physical id / core id pairs).
unsigned physical_cores() {
  std::ifstream in("/proc/cpuinfo");
  std::set<std::pair<std::string, std::string>> cores;
  std::string line, physical = "0";
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = line.substr(0, colon);
    key.erase(key.find_last_not_of(" \t") + 1);
    const std::string value = colon + 2 <= line.size() ? line.substr(colon + 2) : "";
    if (key == "physical id") physical = value;
    if (key == "core id") cores.insert({physical, value});
  }
  return cores.empty() ? std::max(1u, std::thread::hardware_concurrency())
                       : static_cast<unsigned>(cores.size());
}

// Random-valued model with the tensor layout of `arch`.
ModelState random_model_like(const MlpArchitecture& arch, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  auto tensors = decode_model(build_mlp(arch, 0));
  for (auto& t : tensors) {
    for (auto& v : t.values) v = dist(rng);
  }
  return encode_model(tensors, 0);
}

// 1. Codec round trip.
Outcome codec_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  size_t mismatches = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto order = i % 2 ? ByteOrder::kBigEndian : ByteOrder::kLittleEndian;
    const Tensor in = testing_util::random_tensor(rng, 10000, "t" + std::to_string(i));
    const Tensor out = decode_tensor(encode_tensor(in, order));
    const bool same = out.name == in.name && out.shape == in.shape &&
                      out.values.size() == in.values.size() &&
                      std::memcmp(out.values.data(), in.values.data(),
                                  in.values.size() * sizeof(float)) == 0;
    mismatches += !same;
  }
  const double t = seconds_since(t0);
  const std::string d = "10000 tensors, " + std::to_string(mismatches) + " mismatches, " +
                        num(t) + " s (limit 10 s)";
  return mismatches == 0 && t < 10 ? pass(d) : fail(d);
}

// 2. Parameter counts.
Outcome parameter_counts() {
  struct Case {
    const char* size;
    uint32_t units;
    uint64_t expected;
    double target;
  };
  const Case cases[] = {{"100k", 32, 105025, 1e5}, {"1M", 100, 1001401, 1e6},
                        {"10M", 320, 10174081, 1e7}};
  std::string d;
  bool ok = true;
  for (const auto& c : cases) {
    const uint64_t h = c.units, in = 13, out = 1, layers = 100;
    const uint64_t closed = (in * h + h) + (layers - 1) * (h * h + h) + (h * out + out);
    const auto arch = architecture_for_size(c.size);
    const uint64_t built = parameter_count(build_mlp(arch, 1));
    const double off = std::abs(static_cast<double>(built) - c.target) / c.target;
    ok = ok && arch.hidden_units == c.units && built == closed && built == c.expected &&
         off <= 0.051;
    d += std::string(c.size) + "=" + std::to_string(built) + " (" + num(off * 100, 2) + "%) ";
  }
  return ok ? pass(d) : fail(d);
}

// 3. Aggregation correctness across worker counts and against an oracle.
Outcome aggregation_correctness() {
  const auto t0 = Clock::now();
  const auto arch = architecture_for_size("1M");
  std::mt19937_64 rng(77);
  std::vector<ModelState> models;
  std::vector<uint64_t> samples;
  std::uniform_int_distribution<uint64_t> sample_dist(1, 1000);
  for (int i = 0; i < 50; ++i) {
    models.push_back(random_model_like(arch, rng));
    samples.push_back(sample_dist(rng));
  }
  const auto weights = normalized_weights(samples);
  std::vector<WeightedModel> inputs;
  for (size_t i = 0; i < models.size(); ++i) inputs.push_back({&models[i], weights[i]});

  std::vector<ModelState> outputs;
  for (size_t workers : {1, 2, 8}) outputs.push_back(fedavg(inputs, workers));
  const bool identical = outputs[0] == outputs[1] && outputs[0] == outputs[2];

  // Oracle: per element, sum weight * value in double, round once.
  uint64_t worst = 0;
  std::vector<float> value(1);
  for (size_t t = 0; t < models[0].tensors.size(); ++t) {
    const size_t n = models[0].tensors[t].data.size() / 4;
    std::vector<double> acc(n, 0.0);
    for (size_t m = 0; m < models.size(); ++m) {
      const auto& bytes = models[m].tensors[t].data;  // little-endian f32
      for (size_t k = 0; k < n; ++k) {
        uint32_t bits = uint32_t{bytes[4 * k]} | uint32_t{bytes[4 * k + 1]} << 8 |
                        uint32_t{bytes[4 * k + 2]} << 16 | uint32_t{bytes[4 * k + 3]} << 24;
        float f;
        std::memcpy(&f, &bits, 4);
        acc[k] += weights[m] * static_cast<double>(f);
      }
    }
    const auto got = decode_tensor(outputs[0].tensors[t]);
    for (size_t k = 0; k < n; ++k) {
      worst = std::max(worst, testing_util::ulp_distance(got.values[k],
                                                         static_cast<float>(acc[k])));
    }
  }
  const double t = seconds_since(t0);
  const std::string d = std::string("workers {1,2,8} ") +
                        (identical ? "byte-identical" : "DIFFER") + ", max oracle distance " +
                        std::to_string(worst) + " ulp, " + num(t) + " s (limit 60 s)";
  return identical && worst <= 1 && t < 60 ? pass(d) : fail(d);
}

// 4. Aggregation speedup (needs at least 4 physical cores).
Outcome aggregation_speedup() {
  const auto t0 = Clock::now();
  const unsigned cores = physical_cores();
  const auto arch = architecture_for_size("10M");
  std::mt19937_64 rng(5);
  std::vector<ModelState> models;
  for (int i = 0; i < 25; ++i) models.push_back(random_model_like(arch, rng));
  std::vector<WeightedModel> inputs;
  for (const auto& m : models) inputs.push_back({&m, 1.0 / 25});
  auto best_of = [&](size_t workers) {
    double best = INFINITY;
    for (int rep = 0; rep < 2; ++rep) {
      const auto s = Clock::now();
      const auto out = fedavg(inputs, workers);
      best = std::min(best, seconds_since(s));
    }
    return best;
  };
  const double one = best_of(1);
  const double many = best_of(cores);
  const double speedup = one / many;
  const double t = seconds_since(t0);
  std::string d = std::to_string(cores) + " physical core(s): 1 worker " + num(one) +
                  " s, " + std::to_string(cores) + " workers " + num(many) + " s, speedup " +
                  num(speedup, 2) + "x, " + num(t) + " s total (limit 300 s)";
  if (cores < 4) {
    return {Outcome::kNotApplicable, "precondition unmet (" + d + ")"};
  }
  return speedup >= 1.5 && t < 300 ? pass(d) : fail(d);
}

// 5. Synchronous end-to-end run.
Outcome synchronous_run() {
  const auto t0 = Clock::now();
  auto env = base_env("sync-8x100k", 8);
  env.config.max_rounds = 5;
  const auto r = run_federation(env, 120);
  const double t = seconds_since(t0);
  const auto aggregations = count_per_round(r.events, ev::kAggregationEnd);
  const auto replies = count_per_round(r.events, ev::kEvalReply);
  size_t total_aggregations = 0;
  for (const auto& [_, n] : aggregations) total_aggregations += n;
  bool monotone = r.rounds.size() == 5;
  bool eight_losses = true;
  for (uint64_t round = 1; round <= 5; ++round) {
    monotone = monotone && timeline_monotone(round_timeline(r.events, round));
    eight_losses = eight_losses && replies.count(round) && replies.at(round) == 8;
  }
  const std::string d = std::to_string(total_aggregations) + " aggregations, version " +
                        std::to_string(r.status.global_version) + ", monotone " +
                        (monotone ? "yes" : "no") + ", 8 losses/round " +
                        (eight_losses ? "yes" : "no") + ", " + num(t) + " s (limit 120 s)";
  return r.completed && total_aggregations == 5 && r.status.global_version == 5 &&
                 monotone && eight_losses && t < 120
             ? pass(d)
             : fail(d);
}

// 6. Asynchronous liveness with staggered learners.
Outcome asynchronous_liveness() {
  const auto t0 = Clock::now();
  auto env = base_env("async-4", 4);
  env.config.mode = FederationMode::kAsynchronous;
  env.config.max_wall_clock_s = 30;
  env.learner_train_delay_s = {0.25, 0.5, 1.0, 2.0};
  const auto r = run_federation(env, 60);
  const double t = seconds_since(t0);
  std::map<std::string, uint64_t> completions;
  uint64_t total = 0;
  for (const auto& e : r.events) {
    if (e.event == ev::kTaskCompleted) {
      ++completions[e.learner_id];
      ++total;
    }
  }
  const uint64_t fastest = completions["learner-0"];
  const uint64_t slowest = completions["learner-3"];
  const std::string d = "version " + std::to_string(r.status.global_version) + ", completions " +
                        std::to_string(total) + " (fastest " + std::to_string(fastest) +
                        ", slowest " + std::to_string(slowest) + "), " + num(t) +
                        " s (limit 60 s)";
  return r.completed && r.status.global_version == total && slowest > 0 &&
                 fastest >= 4 * slowest && t < 60
             ? pass(d)
             : fail(d);
}

// 7. Dispatch does not wait for training.
Outcome dispatch_non_blocking() {
  auto env = base_env("dispatch-delay", 4);
  env.config.max_rounds = 2;
  env.learner_train_delay_s = {2.0};
  const auto r = run_federation(env, 120);
  bool ok = r.completed && r.rounds.size() == 2;
  std::string d;
  for (const auto& m : r.rounds) {
    ok = ok && m.train_task_dispatch_s < 0.2 && m.train_round_s > 2.0;
    d += "round " + std::to_string(m.round) + ": dispatch " + num(m.train_task_dispatch_s, 4) +
         " s, train " + num(m.train_round_s) + " s; ";
  }
  return ok ? pass(d) : fail(d);
}

// 8. A learner dies mid-round.
Outcome fault_tolerance() {
  auto env = base_env("fault-8", 8);
  env.config.max_rounds = 2;
  env.config.train_timeout_s = 5;
  env.learner_train_delay_s = {0, 0, 0, 0, 0, 0, 0, 3.0};  // still training when killed
  auto fed = Federation::initialize(env);
  const auto until = Clock::now() + std::chrono::seconds(30);
  while (Clock::now() < until) {
    const auto s = fed->status();
    if (s.round >= 1 && s.phase == wire::Phase::kTraining) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(500));
  const double killed_at = fed->now();
  fed->kill_learner(7);
  const auto unhealthy = fed->wait_for_health("learner-7", false, 25);
  const bool completed = fed->wait_for_completion(60);
  fed->shutdown();
  const auto log = fed->controller_events();

  size_t round1_models = 0;
  bool timed_out = false, round1_done = false;
  for (const auto& e : log) {
    if (e.round != 1) continue;
    if (e.event == ev::kAggregationEnd) round1_models = e.extra.at("models").get<size_t>();
    if (e.event == ev::kTrainTimeout) timed_out = true;
    if (e.event == ev::kRoundEnd) round1_done = true;
  }
  const double detection = unhealthy ? unhealthy->t - killed_at : -1;
  const std::string d = "round 1 aggregated " + std::to_string(round1_models) +
                        " models" + (timed_out ? " after the train timeout" : "") +
                        ", unhealthy after " +
                        (unhealthy ? num(detection, 2) + " s" : std::string("never")) +
                        " (limit 20 s)";
  return completed && round1_done && timed_out && round1_models == 7 && unhealthy &&
                 detection <= 20
             ? pass(d)
             : fail(d);
}

// 9. Scaling shape of a desk sweep.
Outcome scaling_shape() {
  const auto t0 = Clock::now();
  SweepSpec spec;
  spec.learner_counts = {4, 8, 16};
  spec.model_sizes = {"100k", "1M"};
  spec.rounds = 5;
  spec.parallel_agg = {true};
  spec.seed = 3;
  spec.out_dir = (g_out / "sweep").string();
  spec.bin_dir = FEDLITE_BIN_DIR;
  const auto result = run_sweep(spec);
  const auto plots = plot_results(result.csv_path, (g_out / "sweep" / "plots").string());
  const double t = seconds_since(t0);
  for (const auto& c : result.cells) {
    if (c.failed) return fail("cell " + c.run_id + " failed: " + c.error);
  }
  const auto means = metric_means(read_csv(result.csv_path), "federation_round");
  const std::string fw = configuration_label(true);
  auto mean = [&](const std::string& size, uint32_t n) {
    return means.at(CellKey{fw, parameter_count(architecture_for_size(size)), n});
  };
  bool monotone = true;
  std::string d;
  for (const auto& size : spec.model_sizes) {
    d += size + ":";
    for (size_t i = 0; i < spec.learner_counts.size(); ++i) {
      const uint32_t n = spec.learner_counts[i];
      d += " " + num(mean(size, n), 3);
      if (i > 0) monotone = monotone && mean(size, spec.learner_counts[i - 1]) <= mean(size, n);
    }
    d += "; ";
  }
  for (uint32_t n : spec.learner_counts) monotone = monotone && mean("100k", n) <= mean("1M", n);
  d += std::to_string(plots.plots.size()) + " plots, " + num(t, 1) + " s (limit 900 s), csv " +
       result.csv_path;
  return monotone && plots.plots.size() == 12 && fs::exists(plots.table) && t < 900
             ? pass(d)
             : fail(d);
}

// 10. Analytic gradients against central differences.
Outcome gradient_check() {
  std::mt19937_64 rng(99);
  const MlpArchitecture arch{13, 2, 4, 1};
  const auto data = generate_dataset(8, arch.input_dim, 4);
  const std::vector<double> x(data.features.begin(), data.features.end());
  const std::vector<double> y(data.targets.begin(), data.targets.end());
  std::normal_distribution<double> dist(0.0, 0.7);
  double worst = 0;
  for (int point = 0; point < 10; ++point) {
    auto net = DenseNetwork<double>::from_model(build_mlp(arch, point));
    std::vector<double*> slots;
    for (auto& l : net.layers()) {
      for (auto& v : l.kernel) slots.push_back(&v);
      for (auto& v : l.bias) slots.push_back(&v);
    }
    for (double* p : slots) *p = dist(rng);
    std::vector<DenseNetwork<double>::Layer> grads;
    net.loss_and_gradient(x.data(), y.data(), data.rows, grads);
    std::vector<double> analytic;
    for (const auto& g : grads) {
      analytic.insert(analytic.end(), g.kernel.begin(), g.kernel.end());
      analytic.insert(analytic.end(), g.bias.begin(), g.bias.end());
    }
    std::vector<double> params;
    for (double* p : slots) params.push_back(*p);
    const auto numeric = testing_util::numeric_gradient(params, [&] {
      for (size_t i = 0; i < slots.size(); ++i) *slots[i] = params[i];
      return net.squared_error(x.data(), y.data(), data.rows) / data.rows;
    });
    worst = std::max(worst, testing_util::max_relative_error(analytic, numeric));
  }
  const std::string d = "2 hidden layers x 4 units, 10 points, max relative error " +
                        std::to_string(worst) + " (limit 1e-3)";
  return worst < 1e-3 ? pass(d) : fail(d);
}

}  // namespace
}  // namespace fedlite

int main(int argc, char** argv) {
  using namespace fedlite;
  g_out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "fedlite-acceptance";
  fs::create_directories(g_out);
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"1 codec round trip", codec_round_trip},
      {"2 parameter counts", parameter_counts},
      {"3 aggregation correctness", aggregation_correctness},
      {"4 aggregation speedup", aggregation_speedup},
      {"5 synchronous end-to-end", synchronous_run},
      {"6 asynchronous liveness", asynchronous_liveness},
      {"7 non-blocking dispatch", dispatch_non_blocking},
      {"8 fault tolerance", fault_tolerance},
      {"9 scaling shape", scaling_shape},
      {"10 gradient check", gradient_check},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.status == Outcome::kPass   ? "PASS"
                      : o.status == Outcome::kFail ? "FAIL"
                                                   : "N/A ";
    failures += o.status == Outcome::kFail;
    std::cout << tag << "  criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria met or not applicable" : "criteria failed: ")
            << (failures == 0 ? "" : std::to_string(failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}

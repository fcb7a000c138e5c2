#ifndef FEDLITE_BENCH_H_
#define FEDLITE_BENCH_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedlite/driver.h"
#include "fedlite/metrics.h"

namespace fedlite {

struct SweepSpec {
  std::vector<uint32_t> learner_counts = {4, 8, 16};
  std::vector<std::string> model_sizes = {"100k", "1M"};
  uint64_t rounds = 5;
  std::vector<bool> parallel_agg = {true, false};
  uint64_t seed = 0;
  SpawnMode spawn = SpawnMode::kSubprocess;
  std::string out_dir;  // results.csv and runs/<run id>/
  std::string bin_dir;
  double cell_timeout_s = 900;
  // Applied to every cell's environment last (tests inject faults here).
  std::function<void(FederationEnvironment&)> customize;

  // Throws ConfigError.
  void validate() const;
};

// "fedlite" for one aggregation worker, "fedlite+parallel" otherwise.
std::string configuration_label(bool parallel);
// Workers used when parallel aggregation is on: every hardware thread, and at
// least two so the threaded path runs even on a single core.
size_t parallel_worker_count();

struct CellResult {
  std::string run_id;
  std::string framework;
  uint32_t learners = 0;
  std::string model_size;
  uint64_t model_params = 0;
  bool failed = false;
  std::string error;
  std::vector<RoundMetrics> rounds;
  std::vector<uint64_t> round_digests;  // global model digest after each round
};

struct SweepResult {
  std::string csv_path;
  std::vector<CellResult> cells;
};

// Runs every cell of the cartesian product in turn, each on a fresh
// federation, appending CSV rows as it goes. A failing cell becomes a
// metric == "failed" row and the sweep moves on.
SweepResult run_sweep(const SweepSpec& spec);

// Mean of `metric` per (framework, model_params, learners) with each run's
// first round dropped as warm-up (unless it is its only round). Failed rows
// are skipped.
struct CellKey {
  std::string framework;
  uint64_t model_params = 0;
  uint32_t learners = 0;
  auto operator<=>(const CellKey&) const = default;
};
std::map<CellKey, double> metric_means(const std::vector<CsvRow>& rows,
                                       std::string_view metric);

struct PlotOutput {
  std::vector<std::string> plots;  // one SVG per (model size, metric)
  std::string table;               // text table of mean federation_round
};

// Throws SchemaError on a malformed or empty CSV.
PlotOutput plot_results(const std::string& csv_path, const std::string& out_dir);

// "100k" / "1M" / "10M" for the preset sizes, the count otherwise.
std::string size_label(uint64_t model_params);

}  // namespace fedlite

#endif  // FEDLITE_BENCH_H_

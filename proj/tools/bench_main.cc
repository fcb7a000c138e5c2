// Benchmark sweep: learner counts x model sizes x parallel aggregation.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "fedlite/bench.h"
#include "fedlite/process.h"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Federation benchmark harness"};
  app.require_subcommand(1);

  fedlite::SweepSpec spec;
  std::vector<std::string> parallel = {"on", "off"};
  std::string spawn = "subprocess";
  auto* run = app.add_subcommand("run", "run a sweep and write results.csv");
  run->add_option("--learners", spec.learner_counts, "learner counts")->delimiter(',');
  run->add_option("--sizes", spec.model_sizes, "model sizes (100k, 1M, 10M)")->delimiter(',');
  run->add_option("--rounds", spec.rounds, "synchronous rounds per cell");
  run->add_option("--parallel", parallel, "parallel aggregation: on, off")
      ->delimiter(',')
      ->check(CLI::IsMember({"on", "off"}));
  run->add_option("--seed", spec.seed);
  run->add_option("--spawn", spawn)->check(CLI::IsMember({"subprocess", "in_process"}));
  run->add_option("--cell-timeout", spec.cell_timeout_s, "seconds per cell");
  run->add_option("--out", spec.out_dir, "output directory")->required();

  std::string csv, plot_out;
  auto* plot = app.add_subcommand("plot", "log-scale SVG plots and a summary table");
  plot->add_option("--csv", csv, "results CSV")->required();
  plot->add_option("--out", plot_out, "output directory")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      spec.parallel_agg.clear();
      for (const auto& p : parallel) spec.parallel_agg.push_back(p == "on");
      spec.spawn = spawn == "in_process" ? fedlite::SpawnMode::kInProcess
                                         : fedlite::SpawnMode::kSubprocess;
      spec.bin_dir = fedlite::executable_dir();
      const auto result = fedlite::run_sweep(spec);
      size_t failed = 0;
      for (const auto& cell : result.cells) {
        std::cout << cell.run_id << ": ";
        if (cell.failed) {
          ++failed;
          std::cout << "FAILED " << cell.error << "\n";
          continue;
        }
        double mean = 0;
        size_t n = 0;
        for (const auto& r : cell.rounds) {
          if (cell.rounds.size() > 1 && r.round == cell.rounds.front().round) continue;
          mean += r.federation_round_s;
          ++n;
        }
        std::cout << "mean federation_round " << fedlite::format_seconds(mean / n) << " s\n";
      }
      std::cout << "results: " << result.csv_path << "\n";
      return failed == 0 ? 0 : 2;
    }
    const auto out = fedlite::plot_results(csv, plot_out);
    for (const auto& p : out.plots) std::cout << p << "\n";
    std::cout << out.table << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 1;
  }
}

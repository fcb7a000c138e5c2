// Runs one federation described by an environment file.
#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "fedlite/driver.h"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Federation driver"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "initialize, monitor and shut down a federation");
  std::string env_path;
  double timeout_s = 3600;
  run->add_option("--env", env_path, "environment file (YAML)")->required();
  run->add_option("--timeout", timeout_s, "give up waiting for completion after this long");
  CLI11_PARSE(app, argc, argv);

  try {
    auto env = fedlite::load_environment(env_path);
    const auto result = fedlite::run_federation(std::move(env), timeout_s);
    const auto& m = result.manifest;
    std::cout << "run " << m["run_id"].get<std::string>() << ": "
              << (result.completed ? "completed" : "timed out") << ", "
              << result.status.round << " rounds, global version "
              << result.status.global_version << "\n";
    for (const auto& r : result.rounds) {
      std::cout << "  round " << r.round << ": federation_round "
                << fedlite::format_seconds(r.federation_round_s) << " s\n";
    }
    std::cout << "manifest: " << m["run_dir"].get<std::string>() << "/manifest.json\n";
    if (!result.shutdown.forced_kills.empty()) {
      std::cerr << "forced kills:";
      for (const auto& c : result.shutdown.forced_kills) std::cerr << " " << c;
      std::cerr << "\n";
    }
    return result.completed ? 0 : 2;
  } catch (const fedlite::StartupFailure& e) {
    std::cerr << "driver: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "driver: " << e.what() << "\n";
    return 1;
  }
}

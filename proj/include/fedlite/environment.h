#ifndef FEDLITE_ENVIRONMENT_H_
#define FEDLITE_ENVIRONMENT_H_

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedlite/controller.h"
#include "fedlite/model_engine.h"

namespace fedlite {

enum class SpawnMode { kInProcess, kSubprocess, kAttach };
enum class TlsMode { kOff, kSelfSigned, kProvidedPaths };

struct KeyPair {
  std::string cert;
  std::string key;
};

struct TlsSettings {
  TlsMode mode = TlsMode::kOff;
  // provided_paths only.
  KeyPair controller;
  std::vector<KeyPair> learners;
};

// Everything needed to stand up one federation.
struct FederationEnvironment {
  FederationConfig config;  // expected_learners is forced to `learners`
  uint32_t learners = 1;
  std::string model_size = "100k";
  std::optional<MlpArchitecture> architecture;  // overrides model_size
  uint32_t samples = 100;                       // per learner, train and test
  TlsSettings tls;
  SpawnMode spawn = SpawnMode::kInProcess;
  std::string metrics_out;  // CSV appended after the run; empty: none
  std::string run_dir;      // logs, certificates, manifest; empty: a fresh temp dir
  std::string run_id;       // empty: derived from the run dir
  std::string framework = "fedlite";
  std::string bin_dir;      // controller/learner executables; empty: next to this one
  // Attach mode: where the components already listen.
  std::string controller_endpoint;
  std::vector<std::string> learner_endpoints;
  // Extra delay before each training task, per learner index (fault injection).
  std::vector<double> learner_train_delay_s;
  double heartbeat_interval_s = 5;
  uint32_t heartbeat_threshold = 3;
  double shutdown_grace_s = 10;
  double startup_timeout_s = 30;

  MlpArchitecture resolved_architecture() const;
  // Throws ConfigError.
  void validate() const;
};

// Parses the YAML environment format. Unknown keys are errors. Throws
// ConfigError.
FederationEnvironment parse_environment(const std::string& yaml_text);
FederationEnvironment load_environment(const std::string& path);

std::string to_string(SpawnMode mode);
std::string to_string(TlsMode mode);
nlohmann::json to_json(const FederationEnvironment& env);

}  // namespace fedlite

#endif  // FEDLITE_ENVIRONMENT_H_

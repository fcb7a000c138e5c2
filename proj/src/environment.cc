#include "fedlite/environment.h"

#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace fedlite {
namespace {

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("environment: bad value for '" + key + "'");
  }
}

void check_keys(const YAML::Node& map, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!map.IsMap()) throw ConfigError("environment: '" + where + "' must be a mapping");
  for (const auto& kv : map) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) {
      throw ConfigError("environment: unknown key '" + key + "' in " + where);
    }
  }
}

KeyPair parse_pair(const YAML::Node& node, const std::string& where) {
  check_keys(node, {"cert", "key"}, where);
  if (!node["cert"] || !node["key"]) {
    throw ConfigError("environment: " + where + " needs cert and key");
  }
  return KeyPair{scalar<std::string>(node["cert"], where + ".cert"),
                 scalar<std::string>(node["key"], where + ".key")};
}

TlsMode parse_tls_mode(const std::string& s) {
  if (s == "off" || s == "false") return TlsMode::kOff;
  if (s == "self_signed") return TlsMode::kSelfSigned;
  if (s == "provided_paths") return TlsMode::kProvidedPaths;
  throw ConfigError("environment: tls must be off, self_signed or provided_paths");
}

}  // namespace

MlpArchitecture FederationEnvironment::resolved_architecture() const {
  return architecture ? *architecture : architecture_for_size(model_size);
}

void FederationEnvironment::validate() const {
  config.validate();
  if (learners < 1) throw ConfigError("environment: at least one learner");
  const auto arch = resolved_architecture();
  if (arch.input_dim == 0 || arch.hidden_units == 0 || arch.output_dim == 0) {
    throw ConfigError("environment: architecture dimensions must be positive");
  }
  if (samples < 1) throw ConfigError("environment: samples must be positive");
  if (heartbeat_interval_s <= 0 || heartbeat_threshold < 1) {
    throw ConfigError("environment: heartbeat interval and threshold must be positive");
  }
  if (shutdown_grace_s < 0 || startup_timeout_s <= 0) {
    throw ConfigError("environment: bad shutdown grace or startup timeout");
  }
  if (learner_train_delay_s.size() > learners) {
    throw ConfigError("environment: more train delays than learners");
  }
  for (double d : learner_train_delay_s) {
    if (d < 0) throw ConfigError("environment: negative train delay");
  }
  if (!learner_endpoints.empty() && learner_endpoints.size() != learners) {
    throw ConfigError("environment: learner_endpoints must list every learner");
  }
  std::set<std::string> seen;
  for (const auto& e : learner_endpoints) {
    if (!seen.insert(e).second) {
      throw ConfigError("environment: duplicate learner endpoint " + e);
    }
  }
  if (spawn == SpawnMode::kAttach &&
      (controller_endpoint.empty() || learner_endpoints.empty())) {
    throw ConfigError("environment: attach needs controller and learner_endpoints");
  }
  if (tls.mode == TlsMode::kProvidedPaths && tls.learners.size() != learners) {
    throw ConfigError("environment: provided_paths needs one key pair per learner");
  }
}

FederationEnvironment parse_environment(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  check_keys(root,
             {"mode", "rounds", "wall_clock_s", "learners", "model_size", "architecture",
              "epochs", "batch_size", "learning_rate", "seed", "tls", "spawn",
              "metrics_out", "participation", "samples", "train_timeout_s",
              "eval_timeout_s", "ack_timeout_s", "aggregation_workers", "heartbeat",
              "shutdown_grace_s", "startup_timeout_s", "run_dir", "run_id", "framework",
              "bin_dir", "controller", "learner_endpoints", "learner_train_delay_s"},
             "environment");
  FederationEnvironment env;
  auto& c = env.config;
  auto get = [&](const char* key, auto& out) {
    if (root[key]) out = scalar<std::decay_t<decltype(out)>>(root[key], key);
  };

  if (root["mode"]) {
    const auto mode = scalar<std::string>(root["mode"], "mode");
    if (mode == "sync") {
      c.mode = FederationMode::kSynchronous;
    } else if (mode == "async") {
      c.mode = FederationMode::kAsynchronous;
    } else {
      throw ConfigError("environment: mode must be sync or async");
    }
  }
  if (root["rounds"]) c.max_rounds = scalar<uint64_t>(root["rounds"], "rounds");
  if (root["wall_clock_s"]) c.max_wall_clock_s = scalar<double>(root["wall_clock_s"], "wall_clock_s");
  get("learners", env.learners);
  get("model_size", env.model_size);
  if (root["architecture"]) {
    const auto& a = root["architecture"];
    check_keys(a, {"input_dim", "hidden_layers", "hidden_units", "output_dim"}, "architecture");
    MlpArchitecture arch;
    if (a["input_dim"]) arch.input_dim = scalar<uint32_t>(a["input_dim"], "input_dim");
    if (a["hidden_layers"]) arch.hidden_layers = scalar<uint32_t>(a["hidden_layers"], "hidden_layers");
    if (a["hidden_units"]) arch.hidden_units = scalar<uint32_t>(a["hidden_units"], "hidden_units");
    if (a["output_dim"]) arch.output_dim = scalar<uint32_t>(a["output_dim"], "output_dim");
    env.architecture = arch;
  }
  get("epochs", c.hyperparams.epochs);
  get("batch_size", c.hyperparams.batch_size);
  get("learning_rate", c.hyperparams.learning_rate);
  get("seed", c.seed);
  get("participation", c.participation);
  get("train_timeout_s", c.train_timeout_s);
  get("eval_timeout_s", c.eval_timeout_s);
  get("ack_timeout_s", c.ack_timeout_s);
  get("aggregation_workers", c.aggregation_workers);
  get("samples", env.samples);
  get("metrics_out", env.metrics_out);
  get("run_dir", env.run_dir);
  get("run_id", env.run_id);
  get("framework", env.framework);
  get("bin_dir", env.bin_dir);
  get("controller", env.controller_endpoint);
  get("shutdown_grace_s", env.shutdown_grace_s);
  get("startup_timeout_s", env.startup_timeout_s);
  if (root["learner_endpoints"]) {
    env.learner_endpoints =
        scalar<std::vector<std::string>>(root["learner_endpoints"], "learner_endpoints");
  }
  if (root["learner_train_delay_s"]) {
    env.learner_train_delay_s =
        scalar<std::vector<double>>(root["learner_train_delay_s"], "learner_train_delay_s");
  }
  if (root["heartbeat"]) {
    const auto& h = root["heartbeat"];
    check_keys(h, {"interval_s", "threshold"}, "heartbeat");
    if (h["interval_s"]) env.heartbeat_interval_s = scalar<double>(h["interval_s"], "heartbeat.interval_s");
    if (h["threshold"]) env.heartbeat_threshold = scalar<uint32_t>(h["threshold"], "heartbeat.threshold");
  }
  if (root["spawn"]) {
    const auto s = scalar<std::string>(root["spawn"], "spawn");
    if (s == "in_process") {
      env.spawn = SpawnMode::kInProcess;
    } else if (s == "subprocess") {
      env.spawn = SpawnMode::kSubprocess;
    } else if (s == "attach") {
      env.spawn = SpawnMode::kAttach;
    } else {
      throw ConfigError("environment: spawn must be in_process, subprocess or attach");
    }
  }
  if (const auto& t = root["tls"]) {
    if (t.IsScalar()) {
      env.tls.mode = parse_tls_mode(t.as<std::string>());
    } else {
      check_keys(t, {"mode", "controller", "learners"}, "tls");
      if (!t["mode"]) throw ConfigError("environment: tls.mode is required");
      env.tls.mode = parse_tls_mode(scalar<std::string>(t["mode"], "tls.mode"));
      if (t["controller"]) env.tls.controller = parse_pair(t["controller"], "tls.controller");
      if (t["learners"]) {
        if (!t["learners"].IsSequence()) {
          throw ConfigError("environment: tls.learners must be a list");
        }
        for (size_t i = 0; i < t["learners"].size(); ++i) {
          env.tls.learners.push_back(
              parse_pair(t["learners"][i], "tls.learners[" + std::to_string(i) + "]"));
        }
      }
    }
  }
  c.expected_learners = env.learners;
  env.validate();
  return env;
}

FederationEnvironment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read environment file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_environment(text.str());
}

std::string to_string(SpawnMode mode) {
  switch (mode) {
    case SpawnMode::kInProcess: return "in_process";
    case SpawnMode::kSubprocess: return "subprocess";
    case SpawnMode::kAttach: return "attach";
  }
  return "?";
}

std::string to_string(TlsMode mode) {
  switch (mode) {
    case TlsMode::kOff: return "off";
    case TlsMode::kSelfSigned: return "self_signed";
    case TlsMode::kProvidedPaths: return "provided_paths";
  }
  return "?";
}

nlohmann::json to_json(const FederationEnvironment& env) {
  const auto& c = env.config;
  const auto arch = env.resolved_architecture();
  nlohmann::json j;
  j["mode"] = c.mode == FederationMode::kAsynchronous ? "async" : "sync";
  j["rounds"] = c.max_rounds ? nlohmann::json(*c.max_rounds) : nlohmann::json();
  j["wall_clock_s"] = c.max_wall_clock_s ? nlohmann::json(*c.max_wall_clock_s) : nlohmann::json();
  j["learners"] = env.learners;
  j["model_size"] = env.architecture ? "custom" : env.model_size;
  j["architecture"] = {{"input_dim", arch.input_dim},
                       {"hidden_layers", arch.hidden_layers},
                       {"hidden_units", arch.hidden_units},
                       {"output_dim", arch.output_dim}};
  j["model_params"] = parameter_count(arch);
  j["epochs"] = c.hyperparams.epochs;
  j["batch_size"] = c.hyperparams.batch_size;
  j["learning_rate"] = c.hyperparams.learning_rate;
  j["seed"] = c.seed;
  j["participation"] = c.participation;
  j["samples"] = env.samples;
  j["train_timeout_s"] = c.train_timeout_s;
  j["eval_timeout_s"] = c.eval_timeout_s;
  j["ack_timeout_s"] = c.ack_timeout_s;
  j["aggregation_workers"] = c.aggregation_workers;
  j["tls"] = to_string(env.tls.mode);
  j["spawn"] = to_string(env.spawn);
  j["metrics_out"] = env.metrics_out;
  j["run_dir"] = env.run_dir;
  j["run_id"] = env.run_id;
  j["framework"] = env.framework;
  j["heartbeat"] = {{"interval_s", env.heartbeat_interval_s},
                    {"threshold", env.heartbeat_threshold}};
  j["shutdown_grace_s"] = env.shutdown_grace_s;
  j["learner_train_delay_s"] = env.learner_train_delay_s;
  return j;
}

}  // namespace fedlite

#include "fedlite/environment.h"

#include <gtest/gtest.h>

namespace fedlite {
namespace {

TEST(Environment, ParsesEveryDocumentedField) {
  const auto env = parse_environment(R"(
mode: async
rounds: 7
wall_clock_s: 30
learners: 4
model_size: 1M
epochs: 2
batch_size: 50
learning_rate: 0.05
seed: 9
tls: self_signed
spawn: subprocess
metrics_out: out.csv
)");
  EXPECT_EQ(env.config.mode, FederationMode::kAsynchronous);
  EXPECT_EQ(env.config.max_rounds, 7u);
  EXPECT_EQ(env.config.max_wall_clock_s, 30.0);
  EXPECT_EQ(env.learners, 4u);
  EXPECT_EQ(env.config.expected_learners, 4u);
  EXPECT_EQ(env.resolved_architecture(), architecture_for_size("1M"));
  EXPECT_EQ(env.config.hyperparams.epochs, 2u);
  EXPECT_EQ(env.config.hyperparams.batch_size, 50u);
  EXPECT_DOUBLE_EQ(env.config.hyperparams.learning_rate, 0.05);
  EXPECT_EQ(env.config.seed, 9u);
  EXPECT_EQ(env.tls.mode, TlsMode::kSelfSigned);
  EXPECT_EQ(env.spawn, SpawnMode::kSubprocess);
  EXPECT_EQ(env.metrics_out, "out.csv");
}

TEST(Environment, DefaultsAndOptionalSections) {
  const auto env = parse_environment(R"(
rounds: 1
tls: off
architecture: {hidden_layers: 2, hidden_units: 8}
heartbeat: {interval_s: 0.5, threshold: 2}
learner_train_delay_s: [0, 1.5]
learners: 2
)");
  EXPECT_EQ(env.config.mode, FederationMode::kSynchronous);
  EXPECT_EQ(env.spawn, SpawnMode::kInProcess);
  EXPECT_EQ(env.tls.mode, TlsMode::kOff);
  EXPECT_EQ(env.resolved_architecture(), (MlpArchitecture{13, 2, 8, 1}));
  EXPECT_EQ(env.heartbeat_interval_s, 0.5);
  EXPECT_EQ(env.heartbeat_threshold, 2u);
  EXPECT_EQ(env.learner_train_delay_s, (std::vector<double>{0, 1.5}));
  EXPECT_EQ(env.samples, 100u);
}

TEST(Environment, ProvidedPathsTlsSection) {
  const auto env = parse_environment(R"(
rounds: 1
learners: 1
tls:
  mode: provided_paths
  controller: {cert: c.pem, key: c.key}
  learners:
    - {cert: l0.pem, key: l0.key}
)");
  EXPECT_EQ(env.tls.mode, TlsMode::kProvidedPaths);
  EXPECT_EQ(env.tls.controller.cert, "c.pem");
  ASSERT_EQ(env.tls.learners.size(), 1u);
  EXPECT_EQ(env.tls.learners[0].key, "l0.key");
}

TEST(Environment, RejectsInvalidFiles) {
  const char* bad[] = {
      "rounds: 1\nlearners: 0\n",
      "rounds: 1\nbogus: 3\n",
      "rounds: 1\nmode: sometimes\n",
      "rounds: 1\nspawn: docker\n",
      "rounds: 1\ntls: maybe\n",
      "rounds: 1\nmodel_size: 5M\n",
      "rounds: 1\nlearners: x\n",
      "learners: 2\n",  // no termination criterion
      "rounds: 1\nlearners: 2\nlearner_endpoints: [a:1, a:1]\n",
      "rounds: 1\nlearners: 2\nlearner_endpoints: [a:1]\n",
      "rounds: 1\nspawn: attach\nlearners: 1\n",
      "rounds: 1\nlearners: 2\ntls: {mode: provided_paths, controller: {cert: a, key: b}}\n",
      "rounds: 1\nlearners: 1\nlearner_train_delay_s: [1, 2]\n",
      "rounds: [1\n",
  };
  for (const char* text : bad) {
    EXPECT_THROW(parse_environment(text), ConfigError) << text;
  }
  EXPECT_THROW(load_environment("/nonexistent/env.yaml"), ConfigError);
}

TEST(Environment, ManifestCarriesResolvedSettings) {
  auto env = parse_environment("rounds: 3\nlearners: 2\nmodel_size: 100k\n");
  const auto j = to_json(env);
  EXPECT_EQ(j["rounds"], 3);
  EXPECT_EQ(j["learners"], 2);
  EXPECT_EQ(j["model_params"], 105025);
  EXPECT_EQ(j["spawn"], "in_process");
  EXPECT_EQ(j["tls"], "off");
  EXPECT_TRUE(j["wall_clock_s"].is_null());
}

}  // namespace
}  // namespace fedlite

#include "fedlite/model_engine.h"

#include <chrono>
#include <cmath>
#include <random>

namespace fedlite {
namespace {

DenseNetwork<float> network_for(const ModelState& model, const Dataset& data) {
  auto net = DenseNetwork<float>::from_model(model);
  if (net.input_dim() != data.input_dim) {
    throw ShapeMismatch("model expects " + std::to_string(net.input_dim()) +
                        " features, dataset has " +
                        std::to_string(data.input_dim));
  }
  if (net.output_dim() != 1) {
    throw ShapeMismatch("regression targets need a single output unit");
  }
  return net;
}

}  // namespace

uint64_t parameter_count(const MlpArchitecture& arch) {
  const uint64_t in = arch.input_dim;
  const uint64_t h = arch.hidden_units;
  const uint64_t out = arch.output_dim;
  return (in * h + h) + (arch.hidden_layers - 1) * (h * h + h) + (h * out + out);
}

MlpArchitecture architecture_for_size(std::string_view label) {
  MlpArchitecture arch;
  if (label == "100k") {
    arch.hidden_units = 32;
  } else if (label == "1M") {
    arch.hidden_units = 100;
  } else if (label == "10M") {
    arch.hidden_units = 320;
  } else {
    throw ConfigError("unknown model size '" + std::string(label) +
                      "' (expected 100k, 1M or 10M)");
  }
  return arch;
}

ModelState build_mlp(const MlpArchitecture& arch, uint64_t seed) {
  if (arch.input_dim == 0 || arch.hidden_layers == 0 ||
      arch.hidden_units == 0 || arch.output_dim == 0) {
    throw ConfigError("MLP architecture fields must be positive");
  }
  std::mt19937_64 rng(seed);
  ModelState model;
  model.version = 0;
  const uint32_t layers = arch.hidden_layers + 1;
  model.tensors.reserve(2 * layers);
  for (uint32_t l = 0; l < layers; ++l) {
    const uint32_t fan_in = l == 0 ? arch.input_dim : arch.hidden_units;
    const uint32_t fan_out = l + 1 == layers ? arch.output_dim : arch.hidden_units;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<float> dist(static_cast<float>(-limit),
                                               static_cast<float>(limit));
    Tensor kernel{"dense_" + std::to_string(l) + "/kernel", {fan_in, fan_out}, {}};
    kernel.values.resize(static_cast<size_t>(fan_in) * fan_out);
    for (float& v : kernel.values) v = dist(rng);
    Tensor bias{"dense_" + std::to_string(l) + "/bias", {fan_out},
                std::vector<float>(fan_out, 0.0f)};
    model.tensors.push_back(encode_tensor(kernel));
    model.tensors.push_back(encode_tensor(bias));
  }
  return model;
}

Dataset generate_dataset(size_t rows, size_t input_dim, uint64_t seed) {
  return generate_dataset(rows, input_dim, seed, seed);
}

Dataset generate_dataset(size_t rows, size_t input_dim, uint64_t function_seed,
                         uint64_t sample_seed) {
  if (rows == 0 || input_dim == 0) {
    throw ConfigError("dataset needs at least one row and one feature");
  }
  std::mt19937_64 fn_rng(function_seed);
  std::normal_distribution<double> coef(0.0, 1.0);
  std::vector<double> weights(input_dim);
  for (double& w : weights) w = coef(fn_rng);
  const double intercept = coef(fn_rng);

  // Mixed so that sample streams never coincide with the coefficient stream.
  std::mt19937_64 rng(sample_seed ^ 0x9E3779B97F4A7C15ULL);

  std::uniform_real_distribution<float> feature(0.0f, 1.0f);
  std::normal_distribution<double> noise(0.0, 0.1);
  Dataset data;
  data.rows = rows;
  data.input_dim = input_dim;
  data.features.resize(rows * input_dim);
  data.targets.resize(rows);
  for (size_t r = 0; r < rows; ++r) {
    double y = intercept;
    for (size_t c = 0; c < input_dim; ++c) {
      const float x = feature(rng);
      data.features[r * input_dim + c] = x;
      y += weights[c] * x;
    }
    data.targets[r] = static_cast<float>(y + noise(rng));
  }
  return data;
}

std::pair<ModelState, TrainStats> sgd_train(const ModelState& model,
                                            const Dataset& data,
                                            const TrainOptions& options) {
  if (options.epochs == 0 || options.batch_size == 0) {
    throw ConfigError("epochs and batch_size must be at least 1");
  }
  auto net = network_for(model, data);
  const auto lr = static_cast<float>(options.learning_rate);
  std::vector<DenseNetwork<float>::Layer> grads;

  TrainStats stats;
  stats.num_training_samples = data.rows;
  const auto start = std::chrono::steady_clock::now();
  for (uint32_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (size_t first = 0; first < data.rows; first += options.batch_size) {
      const size_t rows = std::min<size_t>(options.batch_size, data.rows - first);
      net.loss_and_gradient(&data.features[first * data.input_dim],
                            &data.targets[first], rows, grads);
      net.apply_gradient(grads, lr);
      ++stats.completed_steps;
    }
    ++stats.completed_epochs;
  }
  const std::chrono::duration<double, std::milli> elapsed =
      std::chrono::steady_clock::now() - start;
  stats.time_per_batch_ms =
      stats.completed_steps == 0 ? 0.0 : elapsed.count() / stats.completed_steps;
  return {net.to_model(model), stats};
}

double evaluate(const ModelState& model, const Dataset& data,
                uint32_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  const auto net = network_for(model, data);
  double total = 0;
  for (size_t first = 0; first < data.rows; first += batch_size) {
    const size_t rows = std::min<size_t>(batch_size, data.rows - first);
    total += net.squared_error(&data.features[first * data.input_dim],
                               &data.targets[first], rows);
  }
  return total / static_cast<double>(data.rows);
}

}  // namespace fedlite

#ifndef FEDLITE_MODEL_ENGINE_H_
#define FEDLITE_MODEL_ENGINE_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedlite/dense_network.h"
#include "fedlite/tensor_codec.h"

namespace fedlite {

// Dense MLP used as the benchmark workload. The 100k / 1M / 10M presets use
// 32 / 100 / 320 hidden units over 100 hidden layers.
struct MlpArchitecture {
  uint32_t input_dim = 13;
  uint32_t hidden_layers = 100;
  uint32_t hidden_units = 32;
  uint32_t output_dim = 1;

  bool operator==(const MlpArchitecture&) const = default;
};

uint64_t parameter_count(const MlpArchitecture& arch);

// "100k", "1M" or "10M". Throws ConfigError otherwise.
MlpArchitecture architecture_for_size(std::string_view label);

struct Dataset {
  size_t rows = 0;
  size_t input_dim = 0;
  std::vector<float> features;  // [rows, input_dim] row-major
  std::vector<float> targets;   // [rows]
};

struct TrainStats {
  double time_per_batch_ms = 0;
  uint64_t completed_steps = 0;
  uint64_t completed_epochs = 0;
  uint64_t num_training_samples = 0;

  bool operator==(const TrainStats&) const = default;
};

struct TrainOptions {
  uint32_t epochs = 1;
  uint32_t batch_size = 100;
  double learning_rate = 0.01;
};

// 2 * (hidden_layers + 1) tensors in forward order, named dense_<i>/kernel
// and dense_<i>/bias. Kernels are Glorot-uniform from `seed`, biases zero.
ModelState build_mlp(const MlpArchitecture& arch, uint64_t seed);

// Features uniform in [0, 1); targets are a fixed linear function of the
// features (coefficients drawn from `seed`) plus Gaussian noise.
Dataset generate_dataset(size_t rows, size_t input_dim, uint64_t seed);
// Same, with the linear function and the samples drawn from separate seeds,
// so several datasets can share one underlying function.
Dataset generate_dataset(size_t rows, size_t input_dim, uint64_t function_seed,
                         uint64_t sample_seed);

// Vanilla mini-batch SGD, batches in dataset order, no shuffling. The
// returned model keeps the input version. Throws ShapeMismatch when the
// model is not a dense chain matching the dataset.
std::pair<ModelState, TrainStats> sgd_train(const ModelState& model,
                                            const Dataset& data,
                                            const TrainOptions& options);

// Mean squared error over all samples, evaluated in batches.
double evaluate(const ModelState& model, const Dataset& data,
                uint32_t batch_size = 100);

}  // namespace fedlite

#endif  // FEDLITE_MODEL_ENGINE_H_

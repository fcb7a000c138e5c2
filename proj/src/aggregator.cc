#include "fedlite/aggregator.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

namespace fedlite {

void ModelStore::insert(const std::string& learner_id, ModelState model,
                        uint64_t samples) {
  insert(learner_id, std::make_shared<const ModelState>(std::move(model)),
         samples);
}

void ModelStore::insert(const std::string& learner_id,
                        std::shared_ptr<const ModelState> model,
                        uint64_t samples) {
  std::lock_guard lock(mu_);
  entries_[learner_id] = StoredModel{std::move(model), samples};
}

std::vector<StoredModel> ModelStore::select(
    std::span<const std::string> ids) const {
  std::lock_guard lock(mu_);
  std::vector<StoredModel> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw MissingModel(id);
    out.push_back(it->second);
  }
  return out;
}

bool ModelStore::contains(const std::string& learner_id) const {
  std::lock_guard lock(mu_);
  return entries_.contains(learner_id);
}

size_t ModelStore::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::vector<std::string> ModelStore::ids() const {
  std::vector<std::string> out;
  {
    std::lock_guard lock(mu_);
    out.reserve(entries_.size());
    for (const auto& [id, _] : entries_) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void ModelStore::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

std::vector<double> normalized_weights(std::span<const uint64_t> samples) {
  if (samples.empty()) throw EmptyInput("no sample counts to normalize");
  double total = 0;
  for (uint64_t s : samples) {
    if (s == 0) throw ConfigError("sample count must be positive");
    total += static_cast<double>(s);
  }
  std::vector<double> out;
  out.reserve(samples.size());
  for (uint64_t s : samples) out.push_back(static_cast<double>(s) / total);
  return out;
}

void validate_plan(const AggregationPlan& plan) {
  if (plan.participant_ids.size() != plan.weights.size()) {
    throw ConfigError("aggregation plan: ids and weights differ in length");
  }
  if (plan.worker_count == 0) {
    throw ConfigError("aggregation plan: worker_count must be positive");
  }
  double sum = 0;
  for (double w : plan.weights) {
    if (!(w > 0)) throw ConfigError("aggregation plan: weights must be positive");
    sum += w;
  }
  if (!plan.weights.empty() && std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("aggregation plan: weights must sum to 1");
  }
}

AggregationPlan make_plan(std::span<const std::string> ids,
                          std::span<const StoredModel> models,
                          size_t worker_count) {
  std::vector<uint64_t> samples;
  samples.reserve(models.size());
  for (const auto& m : models) samples.push_back(m.samples);
  AggregationPlan plan{{ids.begin(), ids.end()}, normalized_weights(samples),
                       worker_count};
  validate_plan(plan);
  return plan;
}

namespace {

void check_compatible(std::span<const WeightedModel> models) {
  if (models.empty()) throw EmptyInput("fedavg needs at least one model");
  const ModelState& ref = *models.front().model;
  for (size_t i = 0; i < models.size(); ++i) {
    const ModelState& m = *models[i].model;
    if (m.tensors.size() != ref.tensors.size()) {
      throw ShapeMismatch("model " + std::to_string(i) + " has " +
                          std::to_string(m.tensors.size()) + " tensors, expected " +
                          std::to_string(ref.tensors.size()));
    }
    for (size_t j = 0; j < ref.tensors.size(); ++j) {
      const auto& a = ref.tensors[j];
      const auto& b = m.tensors[j];
      if (a.name != b.name || a.shape != b.shape || a.dtype != b.dtype) {
        throw ShapeMismatch("model " + std::to_string(i) + " tensor " +
                            std::to_string(j) + " ('" + b.name +
                            "') does not match '" + a.name + "'");
      }
      validate_tensor(b);
    }
  }
}

// Reduces tensor `j` across all models. Scratch buffers belong to the
// calling worker.
SerializedTensor reduce_tensor(std::span<const WeightedModel> models, size_t j,
                               std::vector<double>& acc,
                               std::vector<float>& values) {
  const SerializedTensor& ref = models.front().model->tensors[j];
  const size_t n = element_count(ref.shape);
  acc.assign(n, 0.0);
  values.resize(n);
  for (const auto& wm : models) {
    read_values(wm.model->tensors[j], values);
    const double w = wm.weight;
    for (size_t e = 0; e < n; ++e) acc[e] += w * static_cast<double>(values[e]);
  }
  Tensor out{ref.name, ref.shape, std::vector<float>(n)};
  for (size_t e = 0; e < n; ++e) out.values[e] = static_cast<float>(acc[e]);
  return encode_tensor(out, ByteOrder::kLittleEndian);
}

uint64_t next_version(std::span<const WeightedModel> models) {
  uint64_t v = 0;
  for (const auto& wm : models) v = std::max(v, wm.model->version);
  return v + 1;
}

}  // namespace

ModelState fedavg_sequential(std::span<const WeightedModel> models) {
  check_compatible(models);
  const size_t k = models.front().model->tensors.size();
  ModelState out;
  out.version = next_version(models);
  out.tensors.reserve(k);
  std::vector<double> acc;
  std::vector<float> values;
  for (size_t j = 0; j < k; ++j) {
    out.tensors.push_back(reduce_tensor(models, j, acc, values));
  }
  return out;
}

ModelState fedavg(std::span<const WeightedModel> models, size_t worker_count) {
  check_compatible(models);
  const size_t k = models.front().model->tensors.size();
  const size_t workers = std::max<size_t>(1, std::min(worker_count, k));
  if (workers == 1) return fedavg_sequential(models);

  ModelState out;
  out.version = next_version(models);
  out.tensors.resize(k);
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    std::vector<double> acc;
    std::vector<float> values;
    try {
      for (size_t j = next.fetch_add(1); j < k; j = next.fetch_add(1)) {
        out.tensors[j] = reduce_tensor(models, j, acc, values);
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace fedlite

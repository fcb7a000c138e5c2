#ifndef FEDLITE_AGGREGATOR_H_
#define FEDLITE_AGGREGATOR_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedlite/tensor_codec.h"

namespace fedlite {

struct StoredModel {
  std::shared_ptr<const ModelState> model;
  uint64_t samples = 0;
};

// In-memory map from learner id to that learner's latest local model.
// Inserts may come from concurrent completion handlers.
class ModelStore {
 public:
  // Replaces any previous entry for `learner_id`.
  void insert(const std::string& learner_id, ModelState model, uint64_t samples);
  void insert(const std::string& learner_id,
              std::shared_ptr<const ModelState> model, uint64_t samples);

  // Entries in the order of `ids`. Throws MissingModel for an unknown id.
  std::vector<StoredModel> select(std::span<const std::string> ids) const;

  bool contains(const std::string& learner_id) const;
  size_t size() const;
  // Sorted, so callers get a deterministic participant order.
  std::vector<std::string> ids() const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, StoredModel> entries_;
};

struct WeightedModel {
  const ModelState* model = nullptr;
  double weight = 0;
};

// Who is averaged, with which weights, on how many workers.
struct AggregationPlan {
  std::vector<std::string> participant_ids;
  std::vector<double> weights;
  size_t worker_count = 1;
};

// Sample counts normalized to sum to one. Throws EmptyInput for an empty
// list and ConfigError for a zero count.
std::vector<double> normalized_weights(std::span<const uint64_t> samples);

// Checks the plan invariants (matching lengths, positive weights, sum 1).
void validate_plan(const AggregationPlan& plan);

AggregationPlan make_plan(std::span<const std::string> ids,
                          std::span<const StoredModel> models,
                          size_t worker_count);

// Weighted average of the inputs, tensor by tensor. Every output element is
// accumulated in double precision in input order and rounded to float once.
// Whole tensors are handed to min(worker_count, k) workers, so the result is
// byte-identical for any worker count. Output version is max(input) + 1.
ModelState fedavg(std::span<const WeightedModel> models, size_t worker_count);

// Single-threaded reference path with the same contract.
ModelState fedavg_sequential(std::span<const WeightedModel> models);

}  // namespace fedlite

#endif  // FEDLITE_AGGREGATOR_H_
